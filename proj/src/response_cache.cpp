#include <atomic>
#include <nlohmann/json.hpp>
#include <thread>

#include "instruct_icl/backends.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::backends {
namespace {

using nlohmann::ordered_json;

std::vector<std::string> image_digests(const prompting::ModelRequest& request) {
  std::vector<std::string> out;
  out.reserve(request.images.size());
  for (const auto& path : request.images) {
    try {
      out.push_back(sha256_file_hex(path));
    } catch (const Error&) {
      throw Error(ErrorCode::ImageUnreadable, path.string());
    }
  }
  return out;
}

ordered_json key_inputs(const prompting::ModelRequest& request, BackendKind kind,
                        std::string_view model_id, const std::vector<std::string>& digests) {
  ordered_json j;
  j["backend"] = std::string(to_string(kind));
  j["model"] = std::string(model_id);
  j["temperature"] = request.decode.temperature;
  j["max_output_tokens"] = request.decode.max_output_tokens;
  j["text"] = request.text;
  j["image_digests"] = digests;
  return j;
}

}  // namespace

std::string_view to_string(BackendKind kind) {
  return kind == BackendKind::Http ? "http" : "scripted";
}

std::optional<BackendKind> parse_backend_kind(std::string_view name) {
  if (name == "http") return BackendKind::Http;
  if (name == "scripted") return BackendKind::Scripted;
  return std::nullopt;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec || !std::filesystem::is_directory(dir_)) {
    throw Error(ErrorCode::IoError, "cannot create cache directory " + dir_.string());
  }
}

std::string ResponseCache::key(const prompting::ModelRequest& request, BackendKind kind,
                               std::string_view model_id) {
  return sha256_hex(key_inputs(request, kind, model_id, image_digests(request)).dump());
}

std::filesystem::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / (key + ".json");
}

std::optional<ResponseCache::Entry> ResponseCache::get(const std::string& key) const {
  const auto path = entry_path(key);
  if (!std::filesystem::is_regular_file(path)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(read_file_bytes(path));
    return Entry{j.at("response").at("text").get<std::string>(),
                 j.at("response").value("finish_reason", "")};
  } catch (const std::exception&) {
    // An unreadable entry behaves as a miss; put() will not replace it.
    return std::nullopt;
  }
}

void ResponseCache::put(const std::string& key, const prompting::ModelRequest& request, BackendKind kind,
                        std::string_view model_id, const Entry& entry) const {
  const auto path = entry_path(key);
  if (std::filesystem::exists(path)) return;

  auto j = key_inputs(request, kind, model_id, image_digests(request));
  j["key"] = key;
  j["response"] = {{"text", entry.text}, {"finish_reason", entry.finish_reason}};
  const auto body = j.dump(2) + "\n";

  // Stage under a unique name, then hard-link into place: linking fails if
  // another writer got there first, so the first entry for a key wins.
  static std::atomic<unsigned long> counter{0};
  const std::filesystem::path staged =
      path.string() + ".partial." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
      "." + std::to_string(counter.fetch_add(1));
  write_file_atomic(staged, body);
  std::error_code ec;
  std::filesystem::create_hard_link(staged, path, ec);
  std::filesystem::remove(staged, ec);
}

}  // namespace instruct_icl::backends
