#include <algorithm>
#include <cmath>
#include <thread>

#include "instruct_icl/backends.hpp"

namespace instruct_icl::backends {

void BackendConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (!(temperature >= 0.0)) bad("temperature must be >= 0");
  if (max_retries < 0) bad("max_retries must be >= 0");
  if (!(timeout_seconds > 0.0)) bad("timeout must be > 0");
  if (max_output_tokens <= 0) bad("max_output_tokens must be > 0");
  if (max_in_flight < 1 || max_in_flight > 1024) bad("max_in_flight must be in [1, 1024]");
  if (min_interval_seconds < 0.0) bad("min_interval must be >= 0");
  if (backoff_initial_seconds < 0.0 || backoff_max_seconds < 0.0) bad("backoff must be >= 0");
  if (kind == BackendKind::Scripted && fixture.empty()) bad("scripted backend needs a fixture file");
  if (kind == BackendKind::Http && endpoint.empty()) bad("http backend needs an endpoint");
}

std::shared_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.kind == BackendKind::Scripted) return ScriptedBackend::from_file(config.fixture);
  return std::make_shared<HttpBackend>(config);
}

ModelClient::ModelClient(std::shared_ptr<Backend> backend, BackendConfig config,
                         std::optional<ResponseCache> cache)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      cache_(std::move(cache)),
      in_flight_(std::clamp(config_.max_in_flight, 1, 1024)),
      sleep_([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }),
      rng_(std::random_device{}()) {}

ModelResponse ModelClient::complete(const prompting::ModelRequest& request) {
  std::string key;
  if (cache_) {
    key = ResponseCache::key(request, backend_->kind(), config_.model_id);
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      ModelResponse r;
      r.text = std::move(hit->text);
      r.finish_reason = std::move(hit->finish_reason);
      r.from_cache = true;
      r.backend = backend_->kind();
      return r;
    }
    ++cache_misses_;
  }

  ModelResponse response;
  try {
    response = call_with_retries(request);
  } catch (...) {
    ++failures_;
    throw;
  }
  if (cache_) cache_->put(key, request, backend_->kind(), config_.model_id, {response.text, response.finish_reason});
  return response;
}

ModelResponse ModelClient::call_with_retries(const prompting::ModelRequest& request) {
  for (int attempt = 0;; ++attempt) {
    try {
      wait_for_slot();
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{in_flight_};
      ++attempts_;
      return backend_->complete(request);
    } catch (const TransientError&) {
      if (attempt >= config_.max_retries) throw;
    }
    sleep_(backoff(attempt));
  }
}

void ModelClient::wait_for_slot() {
  if (config_.min_interval_seconds <= 0.0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(config_.min_interval_seconds));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(pace_mu_);
    slot = std::max(std::chrono::steady_clock::now(), next_slot_);
    next_slot_ = slot + interval;
  }
  const auto wait = slot - std::chrono::steady_clock::now();
  if (wait > std::chrono::steady_clock::duration::zero()) sleep_(wait);
}

std::chrono::duration<double> ModelClient::backoff(int attempt) {
  const double base = std::min(config_.backoff_max_seconds,
                               config_.backoff_initial_seconds * std::pow(2.0, attempt));
  double jitter;
  {
    std::lock_guard lock(rng_mu_);
    jitter = std::uniform_real_distribution<double>(0.5, 1.0)(rng_);
  }
  return std::chrono::duration<double>(base * jitter);
}

ModelClient::Stats ModelClient::stats() const {
  return {attempts_.load(), cache_hits_.load(), cache_misses_.load(), failures_.load()};
}

}  // namespace instruct_icl::backends
