#pragma once
// Uniform client for text generation, embeddings, and path editing. Two
// backends: an OpenAI-compatible HTTP gateway, and a deterministic offline
// backend that makes the whole pipeline reproducible without network access.
//
// Responses are cached on disk by content hash, so reruns are free.

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tkgr::llm {

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LlmMessage {
    std::string role;
    std::string content;
};

struct LlmRequest {
    std::vector<LlmMessage> messages;
    std::string model;
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct LlmUsage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct LlmResponse {
    std::string text;
    LlmUsage usage;
    double latency_ms = 0.0;
};

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 250;
};

struct BackendConfig {
    std::string backend = "offline";  // "offline" | "http"
    std::string endpoint;             // e.g. https://api.example.com/v1
    std::string api_key_env = "TKGR_API_KEY";
    std::string generate_model = "generate-default";
    std::string embed_model = "embed-default";
    std::string edit_model = "edit-default";
    RetryPolicy retry;
    int concurrency = 4;       // >= 1
    std::string cache_dir;     // empty disables the cache
    double temperature = 0.0;  // editing needs determinism, so 0 everywhere
    int max_tokens = 2048;
    int offline_embed_dim = 64;
    std::uint64_t offline_seed = 17;
};

struct GatewayStats {
    long calls = 0;
    long cache_hits = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    int max_in_flight = 0;  // highest concurrent request count observed
};

// ceil(bytes / 4): the offline token estimate.
long estimate_tokens(const std::string& text);

std::string sha256_hex(const std::string& bytes);

class Gateway {
public:
    explicit Gateway(BackendConfig config);
    ~Gateway();

    const BackendConfig& config() const { return config_; }

    std::string generate(const std::string& prompt);
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);
    std::string chat_edit(const std::string& prompt);

    LlmResponse generate_response(const std::string& prompt);
    LlmResponse chat_edit_response(const std::string& prompt);

    GatewayStats stats() const;

    // Test hook: replaces the offline completion function (used by the
    // concurrency load test and editor failure-path tests).
    void set_offline_handler(std::function<std::string(const std::string&)> handler);

    struct Impl;

private:
    LlmResponse complete(const std::string& model, const std::string& prompt, bool edit_role);
    BackendConfig config_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tkgr::llm
