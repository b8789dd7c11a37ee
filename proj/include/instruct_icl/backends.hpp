#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "instruct_icl/error.hpp"
#include "instruct_icl/prompting.hpp"

namespace instruct_icl::backends {

enum class BackendKind { Http, Scripted };

std::string_view to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view name);

struct BackendConfig {
  BackendKind kind = BackendKind::Scripted;
  std::string endpoint;
  // Request adapter for the http backend: "openai-chat" or "gemini".
  std::string provider = "openai-chat";
  std::string model_id = "scripted";
  std::string system_prompt;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  double timeout_seconds = 120.0;
  int max_retries = 3;
  double backoff_initial_seconds = 1.0;
  double backoff_max_seconds = 30.0;
  double min_interval_seconds = 0.0;
  int max_in_flight = 4;
  std::string credential_env = "INSTRUCT_ICL_API_KEY";
  std::filesystem::path fixture;

  // Throws InvalidConfig.
  void validate() const;
};

struct ModelResponse {
  std::string text;
  std::string finish_reason;
  double latency_ms = 0.0;
  bool from_cache = false;
  BackendKind backend = BackendKind::Scripted;
};

// A failure worth retrying (connection errors, 5xx, 429).
class TransientError : public Error {
 public:
  using Error::Error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  // One attempt, no caching or retrying. Throws Error / TransientError.
  virtual ModelResponse complete(const prompting::ModelRequest& request) = 0;
};

// Directory of write-once JSON entries, one file per key.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  // Hash over backend kind, model id, decode params, request text and the
  // SHA-256 of every image's bytes, in order. Paths do not participate.
  // Throws ImageUnreadable.
  static std::string key(const prompting::ModelRequest& request, BackendKind kind,
                         std::string_view model_id);

  struct Entry {
    std::string text;
    std::string finish_reason;
  };

  std::optional<Entry> get(const std::string& key) const;
  // No-op when the key already exists.
  void put(const std::string& key, const prompting::ModelRequest& request, BackendKind kind,
           std::string_view model_id, const Entry& entry) const;

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::filesystem::path dir_;
};

// Replays canned responses keyed by (question_id, strategy, stage). Rules may
// assert substrings of the request text, which turns prompt-structure
// regressions into FixtureAssertionFailed errors.
class ScriptedBackend : public Backend {
 public:
  struct Rule {
    std::string question_id;
    prompting::Strategy strategy = prompting::Strategy::ZeroShot;
    prompting::Stage stage = prompting::Stage::Two;
    // Rule for the tag-repair resend; falls back to the attempt-0 rule.
    int attempt = 0;
    std::vector<std::string> must_contain;
    std::string response;
  };

  // JSON Lines; throws MalformedRecord (with line) or FileNotFound.
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
  static std::shared_ptr<ScriptedBackend> from_jsonl(std::string_view jsonl);
  explicit ScriptedBackend(std::vector<Rule> rules);

  BackendKind kind() const override { return BackendKind::Scripted; }
  ModelResponse complete(const prompting::ModelRequest& request) override;

  // Artificial per-call latency, so concurrency limits are observable.
  void set_delay(std::chrono::milliseconds delay) { delay_ = delay; }

  std::size_t calls() const { return calls_.load(); }
  int max_concurrency_observed() const { return max_in_flight_.load(); }

 private:
  using Key = std::tuple<std::string, prompting::Strategy, prompting::Stage, int>;
  std::map<Key, Rule> rules_;
  std::chrono::milliseconds delay_{0};
  std::atomic<std::size_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

// Chat-style JSON over HTTP(S). The credential is read from the environment
// variable named by config.credential_env on every call.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  BackendKind kind() const override { return BackendKind::Http; }
  ModelResponse complete(const prompting::ModelRequest& request) override;

  // Exposed for tests: the JSON body sent for a request.
  std::string build_body(const prompting::ModelRequest& request) const;

 private:
  BackendConfig config_;
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);

// Cache lookup, rate limiting, in-flight cap and retry with exponential
// backoff around one Backend. Safe to share between worker threads.
class ModelClient {
 public:
  ModelClient(std::shared_ptr<Backend> backend, BackendConfig config,
              std::optional<ResponseCache> cache);

  ModelResponse complete(const prompting::ModelRequest& request);

  struct Stats {
    std::size_t attempts = 0;
    std::size_t cache_hits = 0;
    std::size_t cache_misses = 0;
    std::size_t failures = 0;
  };
  Stats stats() const;

  const BackendConfig& config() const { return config_; }
  BackendKind kind() const { return backend_->kind(); }

  using SleepFn = std::function<void(std::chrono::duration<double>)>;
  void set_sleep(SleepFn sleep) { sleep_ = std::move(sleep); }

 private:
  ModelResponse call_with_retries(const prompting::ModelRequest& request);
  void wait_for_slot();
  std::chrono::duration<double> backoff(int attempt);

  std::shared_ptr<Backend> backend_;
  BackendConfig config_;
  std::optional<ResponseCache> cache_;
  std::counting_semaphore<1024> in_flight_;
  SleepFn sleep_;

  std::mutex pace_mu_;
  std::chrono::steady_clock::time_point next_slot_{};

  std::mutex rng_mu_;
  std::mt19937_64 rng_;

  std::atomic<std::size_t> attempts_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> cache_misses_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace instruct_icl::backends
