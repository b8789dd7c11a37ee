#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instruct_icl/backends.hpp"

namespace instruct_icl::cli {

struct CliConfig {
  std::filesystem::path dataset;
  std::filesystem::path pool;
  std::filesystem::path embeddings;
  std::filesystem::path index;
  std::filesystem::path templates;
  std::filesystem::path run_dir;
  std::filesystem::path cache_dir = ".instruct-icl-cache";
  bool use_cache = true;
  std::string strategy;
  int parallelism = 1;
  std::string log_level = "warn";
  bool attach_exemplar_images = true;
  backends::BackendConfig backend;
};

// One configurable field: where it lives in the config file, which
// environment variable and which flag can set it.
struct FieldSpec {
  std::string name;
  std::string section;
  std::string env;
  std::string flag;
};

const std::vector<FieldSpec>& config_fields();

// TOML-style subset: [section] headers, key = value lines, "quoted" or
// 'literal' strings, bare numbers and booleans, # comments. Keys come back
// as "section.key". Throws InvalidConfig with the line number.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

using EnvLookup = std::function<const char*(const char*)>;

// Field-wise precedence: flags > environment > config file > defaults.
// `flags` is keyed by field name. Relative paths from the config file are
// resolved against its directory.
CliConfig resolve_config(const std::map<std::string, std::string>& flags,
                         const std::optional<std::filesystem::path>& config_file,
                         const EnvLookup& getenv = [](const char* n) { return std::getenv(n); });

}  // namespace instruct_icl::cli
