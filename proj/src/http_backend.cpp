#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "instruct_icl/backends.hpp"
#include "instruct_icl/hashing.hpp"

namespace instruct_icl::backends {
namespace {

using nlohmann::json;

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidConfig, "endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string mime_type(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "application/octet-stream";
}

std::string read_image(const std::filesystem::path& path) {
  try {
    return read_file_bytes(path);
  } catch (const Error&) {
    throw Error(ErrorCode::ImageUnreadable, path.string());
  }
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

json openai_body(const BackendConfig& cfg, const prompting::ModelRequest& req) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", req.text}});
  for (const auto& image : req.images) {
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + mime_type(image) + ";base64," + base64_encode(read_image(image))}}}});
  }
  json messages = json::array();
  if (!cfg.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", cfg.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", content}});
  return {{"model", cfg.model_id},
          {"temperature", req.decode.temperature},
          {"max_tokens", req.decode.max_output_tokens},
          {"messages", messages}};
}

ModelResponse openai_parse(const json& body) {
  const auto& choice = body.at("choices").at(0);
  const auto& content = choice.at("message").at("content");
  ModelResponse r;
  if (content.is_string()) {
    r.text = content.get<std::string>();
  } else {
    for (const auto& part : content) {
      if (part.value("type", "") == "text") r.text += part.at("text").get<std::string>();
    }
  }
  r.finish_reason = choice.value("finish_reason", "");
  return r;
}

json gemini_body(const BackendConfig& cfg, const prompting::ModelRequest& req) {
  json parts = json::array();
  parts.push_back({{"text", req.text}});
  for (const auto& image : req.images) {
    parts.push_back({{"inline_data", {{"mime_type", mime_type(image)}, {"data", base64_encode(read_image(image))}}}});
  }
  json body = {{"contents", json::array({{{"role", "user"}, {"parts", parts}}})},
               {"generationConfig",
                {{"temperature", req.decode.temperature}, {"maxOutputTokens", req.decode.max_output_tokens}}}};
  if (!cfg.system_prompt.empty()) body["systemInstruction"] = {{"parts", json::array({{{"text", cfg.system_prompt}}})}};
  return body;
}

ModelResponse gemini_parse(const json& body) {
  const auto& candidate = body.at("candidates").at(0);
  ModelResponse r;
  for (const auto& part : candidate.at("content").at("parts")) {
    if (part.contains("text")) r.text += part.at("text").get<std::string>();
  }
  r.finish_reason = candidate.value("finishReason", "");
  return r;
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  if (config_.provider != "openai-chat" && config_.provider != "gemini") {
    throw Error(ErrorCode::InvalidConfig, "unknown provider '" + config_.provider + "'");
  }
  if (config_.endpoint.empty()) throw Error(ErrorCode::InvalidConfig, "http backend needs an endpoint");
  split_url(config_.endpoint);
}

std::string HttpBackend::build_body(const prompting::ModelRequest& request) const {
  return (config_.provider == "gemini" ? gemini_body(config_, request) : openai_body(config_, request)).dump();
}

ModelResponse HttpBackend::complete(const prompting::ModelRequest& request) {
  const char* credential = std::getenv(config_.credential_env.c_str());
  if (credential == nullptr || *credential == '\0') {
    throw Error(ErrorCode::AuthMissing, "environment variable " + config_.credential_env + " is not set");
  }
  const auto body = build_body(request);

  const auto url = split_url(replace_all(config_.endpoint, "{model}", config_.model_id));
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  if (config_.provider == "gemini") {
    headers.emplace("x-goog-api-key", credential);
  } else {
    headers.emplace("Authorization", std::string("Bearer ") + credential);
  }

  const auto start = std::chrono::steady_clock::now();
  auto result = client.Post(url.path, headers, body, "application/json");
  if (!result) {
    throw TransientError(ErrorCode::Transport, "request failed: " + httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status == 429) throw TransientError(ErrorCode::RateLimited, "HTTP 429");
  if (status >= 500 || status == 408) {
    throw TransientError(ErrorCode::Transport, "HTTP " + std::to_string(status));
  }
  if (status < 200 || status >= 300) {
    throw Error(ErrorCode::Transport, "HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200));
  }

  ModelResponse response;
  try {
    const auto parsed = json::parse(result->body);
    response = config_.provider == "gemini" ? gemini_parse(parsed) : openai_parse(parsed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Transport, std::string("unexpected response body: ") + e.what());
  }
  response.backend = BackendKind::Http;
  response.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return response;
}

}  // namespace instruct_icl::backends
