#include "instruct_icl/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "instruct_icl/error.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void invalid(std::size_t line, const std::string& reason) {
  throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line) + ": " + reason);
}

// Parses a value starting at s; returns it and the unparsed remainder.
std::pair<std::string, std::string_view> parse_value(std::string_view s, std::size_t line) {
  if (s.empty()) invalid(line, "missing value");
  if (s.front() == '\'') {
    const auto end = s.find('\'', 1);
    if (end == std::string_view::npos) invalid(line, "unterminated string");
    return {std::string(s.substr(1, end - 1)), s.substr(end + 1)};
  }
  if (s.front() == '"') {
    std::string out;
    for (std::size_t i = 1; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '"') return {out, s.substr(i + 1)};
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (++i == s.size()) break;
      switch (s[i]) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: invalid(line, std::string("unsupported escape \\") + s[i]);
      }
    }
    invalid(line, "unterminated string");
  }
  const auto end = s.find('#');
  const auto bare = trim(s.substr(0, end));
  if (bare.empty()) invalid(line, "missing value");
  return {std::string(bare), end == std::string_view::npos ? std::string_view{} : s.substr(end)};
}

const FieldSpec* find_field(std::string_view name) {
  for (const auto& f : config_fields()) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

struct Layered {
  std::map<std::string, std::string> values;
  std::map<std::string, std::string> origin;

  const std::string* get(const std::string& name) const {
    auto it = values.find(name);
    return it == values.end() ? nullptr : &it->second;
  }
};

[[noreturn]] void bad_field(const Layered& l, const std::string& name, const std::string& reason) {
  throw Error(ErrorCode::InvalidConfig, name + " (from " + l.origin.at(name) + "): " + reason);
}

int to_int(const Layered& l, const std::string& name, int fallback) {
  const auto* v = l.get(name);
  if (!v) return fallback;
  int out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) bad_field(l, name, "expected an integer, got '" + *v + "'");
  return out;
}

double to_double(const Layered& l, const std::string& name, double fallback) {
  const auto* v = l.get(name);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    bad_field(l, name, "expected a number, got '" + *v + "'");
  }
}

bool to_bool(const Layered& l, const std::string& name, bool fallback) {
  const auto* v = l.get(name);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  bad_field(l, name, "expected true or false, got '" + *v + "'");
}

std::string to_string_field(const Layered& l, const std::string& name, std::string fallback) {
  const auto* v = l.get(name);
  return v ? *v : fallback;
}

std::filesystem::path to_path(const Layered& l, const std::string& name, std::filesystem::path fallback) {
  const auto* v = l.get(name);
  return v ? std::filesystem::path(*v) : fallback;
}

bool is_path_field(std::string_view name) {
  return name == "dataset" || name == "pool" || name == "embeddings" || name == "index" ||
         name == "templates" || name == "run_dir" || name == "cache_dir" || name == "fixture";
}

}  // namespace

const std::vector<FieldSpec>& config_fields() {
  static const std::vector<FieldSpec> fields = {
      {"dataset", "data", "INSTRUCT_ICL_DATASET", "--dataset"},
      {"pool", "data", "INSTRUCT_ICL_POOL", "--pool"},
      {"embeddings", "data", "INSTRUCT_ICL_EMBEDDINGS", "--embeddings"},
      {"index", "data", "INSTRUCT_ICL_INDEX", "--index"},
      {"templates", "data", "INSTRUCT_ICL_TEMPLATES", "--templates"},
      {"strategy", "run", "INSTRUCT_ICL_STRATEGY", "--strategy"},
      {"parallelism", "run", "INSTRUCT_ICL_PARALLELISM", "--parallelism"},
      {"run_dir", "run", "INSTRUCT_ICL_RUN_DIR", "--run-dir"},
      {"cache_dir", "run", "INSTRUCT_ICL_CACHE_DIR", "--cache-dir"},
      {"use_cache", "run", "INSTRUCT_ICL_USE_CACHE", ""},
      {"log_level", "run", "INSTRUCT_ICL_LOG_LEVEL", "--log-level"},
      {"attach_exemplar_images", "run", "INSTRUCT_ICL_ATTACH_EXEMPLAR_IMAGES", ""},
      {"backend", "backend", "INSTRUCT_ICL_BACKEND", "--backend"},
      {"fixture", "backend", "INSTRUCT_ICL_FIXTURE", "--fixture"},
      {"endpoint", "backend", "INSTRUCT_ICL_ENDPOINT", "--endpoint"},
      {"provider", "backend", "INSTRUCT_ICL_PROVIDER", ""},
      {"model", "backend", "INSTRUCT_ICL_MODEL", "--model"},
      {"system_prompt", "backend", "INSTRUCT_ICL_SYSTEM_PROMPT", ""},
      {"temperature", "backend", "INSTRUCT_ICL_TEMPERATURE", "--temperature"},
      {"max_output_tokens", "backend", "INSTRUCT_ICL_MAX_OUTPUT_TOKENS", ""},
      {"timeout_seconds", "backend", "INSTRUCT_ICL_TIMEOUT_SECONDS", ""},
      {"max_retries", "backend", "INSTRUCT_ICL_MAX_RETRIES", ""},
      {"backoff_initial_seconds", "backend", "INSTRUCT_ICL_BACKOFF_INITIAL_SECONDS", ""},
      {"backoff_max_seconds", "backend", "INSTRUCT_ICL_BACKOFF_MAX_SECONDS", ""},
      {"min_interval_seconds", "backend", "INSTRUCT_ICL_MIN_INTERVAL_SECONDS", ""},
      {"max_in_flight", "backend", "INSTRUCT_ICL_MAX_IN_FLIGHT", ""},
      {"credential_env", "backend", "INSTRUCT_ICL_CREDENTIAL_ENV", ""},
  };
  return fields;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string section;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos) invalid(line_no, "unterminated section header");
      section = std::string(trim(line.substr(1, close - 1)));
      if (section.empty()) invalid(line_no, "empty section name");
      const auto rest = trim(line.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') invalid(line_no, "unexpected text after section header");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) invalid(line_no, "expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) invalid(line_no, "empty key");
    auto [value, rest] = parse_value(trim(line.substr(eq + 1)), line_no);
    rest = trim(rest);
    if (!rest.empty() && rest.front() != '#') invalid(line_no, "unexpected text after value");
    const auto full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (!out.emplace(full, std::move(value)).second) invalid(line_no, "duplicate key '" + full + "'");
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::FileNotFound, path.string());
  try {
    return parse_config_text(read_file_bytes(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

CliConfig resolve_config(const std::map<std::string, std::string>& flags,
                         const std::optional<std::filesystem::path>& config_file, const EnvLookup& getenv) {
  Layered l;

  if (config_file) {
    const auto base = config_file->parent_path();
    for (const auto& [full, value] : parse_config_file(*config_file)) {
      const auto dot = full.find('.');
      const auto section = dot == std::string::npos ? std::string() : full.substr(0, dot);
      const auto name = dot == std::string::npos ? full : full.substr(dot + 1);
      const auto* field = find_field(name);
      if (!field || field->section != section) {
        throw Error(ErrorCode::InvalidConfig, config_file->string() + ": unknown key '" + full + "'");
      }
      std::string v = value;
      if (is_path_field(name) && !v.empty() && std::filesystem::path(v).is_relative() && !base.empty()) {
        v = (base / v).lexically_normal().string();
      }
      l.values[name] = std::move(v);
      l.origin[name] = config_file->string();
    }
  }
  for (const auto& f : config_fields()) {
    if (const char* v = getenv(f.env.c_str()); v != nullptr && *v != '\0') {
      l.values[f.name] = v;
      l.origin[f.name] = f.env;
    }
  }
  for (const auto& [name, value] : flags) {
    const auto* field = find_field(name);
    if (!field) throw Error(ErrorCode::InvalidConfig, "unknown setting '" + name + "'");
    l.values[name] = value;
    l.origin[name] = field->flag.empty() ? name : field->flag;
  }

  CliConfig c;
  c.dataset = to_path(l, "dataset", c.dataset);
  c.pool = to_path(l, "pool", c.pool);
  c.embeddings = to_path(l, "embeddings", c.embeddings);
  c.index = to_path(l, "index", c.index);
  c.templates = to_path(l, "templates", c.templates);
  c.run_dir = to_path(l, "run_dir", c.run_dir);
  c.cache_dir = to_path(l, "cache_dir", c.cache_dir);
  c.use_cache = to_bool(l, "use_cache", c.use_cache);
  c.strategy = to_string_field(l, "strategy", c.strategy);
  c.parallelism = to_int(l, "parallelism", c.parallelism);
  c.log_level = to_string_field(l, "log_level", c.log_level);
  c.attach_exemplar_images = to_bool(l, "attach_exemplar_images", c.attach_exemplar_images);

  auto& b = c.backend;
  const auto kind_name = to_string_field(l, "backend", std::string(backends::to_string(b.kind)));
  const auto kind = backends::parse_backend_kind(kind_name);
  if (!kind) throw Error(ErrorCode::InvalidConfig, "unknown backend '" + kind_name + "' (expected http|scripted)");
  b.kind = *kind;
  b.fixture = to_path(l, "fixture", b.fixture);
  b.endpoint = to_string_field(l, "endpoint", b.endpoint);
  b.provider = to_string_field(l, "provider", b.provider);
  b.model_id = to_string_field(l, "model", b.kind == backends::BackendKind::Http ? "" : b.model_id);
  b.system_prompt = to_string_field(l, "system_prompt", b.system_prompt);
  b.temperature = to_double(l, "temperature", b.temperature);
  b.max_output_tokens = to_int(l, "max_output_tokens", b.max_output_tokens);
  b.timeout_seconds = to_double(l, "timeout_seconds", b.timeout_seconds);
  b.max_retries = to_int(l, "max_retries", b.max_retries);
  b.backoff_initial_seconds = to_double(l, "backoff_initial_seconds", b.backoff_initial_seconds);
  b.backoff_max_seconds = to_double(l, "backoff_max_seconds", b.backoff_max_seconds);
  b.min_interval_seconds = to_double(l, "min_interval_seconds", b.min_interval_seconds);
  b.max_in_flight = to_int(l, "max_in_flight", b.max_in_flight);
  b.credential_env = to_string_field(l, "credential_env", b.credential_env);

  if (c.parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  return c;
}

}  // namespace instruct_icl::cli
