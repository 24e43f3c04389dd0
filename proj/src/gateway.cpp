#include "tkgr/gateway.hpp"

#include "tkgr/edit_rules.hpp"
#include "tkgr/path_text.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#ifndef TKGR_NO_HTTP
#include <httplib.h>
#endif

namespace tkgr::llm {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// sha256 (FIPS 180-4), used for cache keys

struct Sha256 {
    std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                          0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    std::uint64_t length = 0;
    unsigned char buffer[64];
    std::size_t buffered = 0;

    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void process(const unsigned char* p) {
        static const std::uint32_t k[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
            0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
            0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
            0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
            0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
            0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
            0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
            0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (std::uint32_t(p[i * 4]) << 24) | (std::uint32_t(p[i * 4 + 1]) << 16) |
                   (std::uint32_t(p[i * 4 + 2]) << 8) | std::uint32_t(p[i * 4 + 3]);
        for (int i = 16; i < 64; ++i) {
            std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
        std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            std::uint32_t ch = (e & f) ^ (~e & g);
            std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
            std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            std::uint32_t t2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + t1;
            d = c;
            c = b;
            b = a;
            a = t1 + t2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    void update(const unsigned char* data, std::size_t len) {
        length += len;
        while (len > 0) {
            std::size_t take = std::min(len, std::size_t{64} - buffered);
            std::memcpy(buffer + buffered, data, take);
            buffered += take;
            data += take;
            len -= take;
            if (buffered == 64) {
                process(buffer);
                buffered = 0;
            }
        }
    }

    std::string finish() {
        std::uint64_t bit_len = length * 8;
        const unsigned char pad = 0x80;
        update(&pad, 1);
        const unsigned char zero = 0;
        while (buffered != 56) update(&zero, 1);
        unsigned char len_bytes[8];
        for (int i = 0; i < 8; ++i)
            len_bytes[i] = static_cast<unsigned char>(bit_len >> (56 - i * 8));
        update(len_bytes, 8);
        static const char* hex = "0123456789abcdef";
        std::string out;
        out.reserve(64);
        for (std::uint32_t v : h)
            for (int i = 3; i >= 0; --i) {
                auto byte = static_cast<unsigned char>(v >> (i * 8));
                out.push_back(hex[byte >> 4]);
                out.push_back(hex[byte & 0xf]);
            }
        return out;
    }
};

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::string extract_quoted_label(const std::string& prompt) {
    auto open = prompt.find('"');
    if (open == std::string::npos) return "unknown";
    auto close = prompt.find('"', open + 1);
    if (close == std::string::npos) return "unknown";
    return prompt.substr(open + 1, close - open - 1);
}

bool contains(const std::string& haystack, const char* needle) {
    return haystack.find(needle) != std::string::npos;
}

// Fixed templates keyed off the prompt wording; keeps tests hermetic.
std::string offline_generate(const std::string& prompt) {
    std::string label = extract_quoted_label(prompt);
    if (contains(prompt, "passive form"))
        return "Relation " + label + " (passive): one actor is " + label +
               " by another in recorded events.";
    if (contains(prompt, "relation"))
        return "Relation " + label + ": one actor does " + label +
               " toward another in recorded events.";
    return "Entity " + label + ": " + label + " is an actor in recorded events.";
}

// Deterministic unit vector derived from the text hash.
std::vector<double> offline_embed_one(const std::string& text, int dim, std::uint64_t seed) {
    std::uint64_t state = fnv1a64(text) ^ (seed * 0x9e3779b97f4a7c15ull);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm_sq = 0.0;
    for (auto& x : v) {
        double u1 = (static_cast<double>(splitmix64(state) >> 11) + 0.5) / 9007199254740992.0;
        double u2 = (static_cast<double>(splitmix64(state) >> 11) + 0.5) / 9007199254740992.0;
        x = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        norm_sq += x * x;
    }
    double inv = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
    for (auto& x : v) x *= inv;
    return v;
}

// Parses "Path <n>: (...) -> (...)" lines out of the edit prompt and runs the
// rule engine over each, emitting the JSON edit script a live editor returns.
std::string offline_edit(const std::string& prompt) {
    json script = json::array();
    std::size_t pos = 0;
    while (pos < prompt.size()) {
        std::size_t eol = prompt.find('\n', pos);
        if (eol == std::string::npos) eol = prompt.size();
        std::string line = prompt.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.rfind("Path ", 0) != 0) continue;
        std::size_t colon = line.find(": ");
        if (colon == std::string::npos) continue;
        int path_index = std::atoi(line.substr(5, colon - 5).c_str());
        auto steps = pathtext::parse_path(line.substr(colon + 2));
        if (!steps) continue;
        auto decisions = editrules::decide(*steps);
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            json op;
            op["path"] = path_index;
            op["step"] = i;
            op["action"] = decisions[i].action == editrules::Action::Remove ? "remove" : "keep";
            if (!decisions[i].reason.empty()) op["reason"] = decisions[i].reason;
            script.push_back(op);
        }
    }
    return script.dump();
}

std::optional<json> cache_read(const std::string& dir, const std::string& backend,
                               const std::string& key) {
    if (dir.empty()) return std::nullopt;
    std::filesystem::path path = std::filesystem::path(dir) / backend / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception&) {
        return std::nullopt;  // corrupt entry counts as a miss
    }
}

void cache_write(const std::string& dir, const std::string& backend, const std::string& key,
                 const json& payload) {
    if (dir.empty()) return;
    std::filesystem::path parent = std::filesystem::path(dir) / backend;
    std::filesystem::create_directories(parent);
    std::filesystem::path tmp = parent / (key + ".json.tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << payload.dump();
    }
    std::filesystem::rename(tmp, parent / (key + ".json"));
}

#ifndef TKGR_NO_HTTP
json http_post(const BackendConfig& cfg, const std::string& path, const json& body) {
    std::string endpoint = cfg.endpoint;
    std::string prefix;
    auto scheme_end = endpoint.find("://");
    if (scheme_end != std::string::npos) {
        auto path_start = endpoint.find('/', scheme_end + 3);
        if (path_start != std::string::npos) {
            prefix = endpoint.substr(path_start);
            endpoint = endpoint.substr(0, path_start);
        }
    }
    httplib::Client client(endpoint);
    client.set_connection_timeout(20);
    client.set_read_timeout(120);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    auto res = client.Post(prefix + path, headers, body.dump(), "application/json");
    if (!res)
        throw TransportError("gateway: request to " + endpoint + path +
                             " failed: " + httplib::to_string(res.error()));
    if (res->status / 100 != 2)
        throw TransportError("gateway: HTTP " + std::to_string(res->status) + " from " + path +
                             ": " + res->body.substr(0, 200));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw BackendError(std::string("gateway: invalid JSON reply: ") + e.what());
    }
}
#endif

template <typename F>
auto with_retries(const RetryPolicy& policy, F&& fn) {
    int attempt = 0;
    while (true) {
        try {
            return fn();
        } catch (const TransportError&) {
            if (++attempt >= std::max(1, policy.max_attempts)) throw;
            std::this_thread::sleep_for(
                std::chrono::milliseconds(policy.backoff_ms * (1 << (attempt - 1))));
        }
    }
}

}  // namespace

long estimate_tokens(const std::string& text) {
    return static_cast<long>((text.size() + 3) / 4);
}

std::string sha256_hex(const std::string& bytes) {
    Sha256 s;
    s.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
    return s.finish();
}

// Bounded in-flight requests with an instrumented high-water mark.
struct Gateway::Impl {
    int cap;
    int active = 0;
    int max_active = 0;
    std::mutex mu;
    std::condition_variable cv;
    GatewayStats stats;
    std::function<std::string(const std::string&)> offline_handler;

    explicit Impl(int c) : cap(std::max(1, c)) {}

    void acquire() {
        std::unique_lock lock(mu);
        cv.wait(lock, [this] { return active < cap; });
        ++active;
        max_active = std::max(max_active, active);
    }

    void release() {
        {
            std::lock_guard lock(mu);
            --active;
        }
        cv.notify_one();
    }

    void record(const LlmUsage& usage) {
        std::lock_guard lock(mu);
        ++stats.calls;
        stats.prompt_tokens += usage.prompt_tokens;
        stats.completion_tokens += usage.completion_tokens;
    }
};

namespace {

struct InFlight {
    Gateway::Impl& impl;
    explicit InFlight(Gateway::Impl& i) : impl(i) { impl.acquire(); }
    ~InFlight() { impl.release(); }
};

}  // namespace

Gateway::Gateway(BackendConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(config_.concurrency)) {
    if (config_.concurrency < 1) throw BackendError("gateway: concurrency cap must be >= 1");
}

Gateway::~Gateway() = default;

GatewayStats Gateway::stats() const {
    std::lock_guard lock(impl_->mu);
    GatewayStats s = impl_->stats;
    s.max_in_flight = impl_->max_active;
    return s;
}

void Gateway::set_offline_handler(std::function<std::string(const std::string&)> handler) {
    impl_->offline_handler = std::move(handler);
}

LlmResponse Gateway::complete(const std::string& model, const std::string& prompt,
                              bool edit_role) {
    std::string key = sha256_hex(config_.backend + "\x1f" + model + "\x1f" + prompt);
    if (auto hit = cache_read(config_.cache_dir, config_.backend, key)) {
        std::lock_guard lock(impl_->mu);
        ++impl_->stats.cache_hits;
        return {hit->at("text").get<std::string>(),
                {hit->value("prompt_tokens", 0L), hit->value("completion_tokens", 0L)},
                0.0};
    }
    InFlight scope(*impl_);
    auto start = std::chrono::steady_clock::now();
    LlmResponse resp;
    if (config_.backend == "offline") {
        if (impl_->offline_handler)
            resp.text = impl_->offline_handler(prompt);
        else
            resp.text = edit_role ? offline_edit(prompt) : offline_generate(prompt);
        resp.usage = {estimate_tokens(prompt), estimate_tokens(resp.text)};
    } else {
#ifndef TKGR_NO_HTTP
        json body{{"model", model},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", config_.temperature},
                  {"max_tokens", config_.max_tokens}};
        json reply = with_retries(config_.retry,
                                  [&] { return http_post(config_, "/chat/completions", body); });
        try {
            resp.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception&) {
            throw BackendError("gateway: reply lacks choices[0].message.content");
        }
        if (reply.contains("usage")) {
            resp.usage.prompt_tokens = reply["usage"].value("prompt_tokens", 0L);
            resp.usage.completion_tokens = reply["usage"].value("completion_tokens", 0L);
        } else {
            resp.usage = {estimate_tokens(prompt), estimate_tokens(resp.text)};
        }
#else
        throw TransportError("gateway: HTTP backend disabled in this build");
#endif
    }
    if (resp.text.empty()) throw BackendError("gateway: empty completion");
    auto end = std::chrono::steady_clock::now();
    resp.latency_ms = std::chrono::duration<double, std::milli>(end - start).count();
    impl_->record(resp.usage);
    cache_write(config_.cache_dir, config_.backend, key,
                json{{"text", resp.text},
                     {"prompt_tokens", resp.usage.prompt_tokens},
                     {"completion_tokens", resp.usage.completion_tokens}});
    return resp;
}

LlmResponse Gateway::generate_response(const std::string& prompt) {
    return complete(config_.generate_model, prompt, /*edit_role=*/false);
}

std::string Gateway::generate(const std::string& prompt) { return generate_response(prompt).text; }

LlmResponse Gateway::chat_edit_response(const std::string& prompt) {
    return complete(config_.edit_model, prompt, /*edit_role=*/true);
}

std::string Gateway::chat_edit(const std::string& prompt) {
    return chat_edit_response(prompt).text;
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw BackendError("gateway: embed called with no texts");
    std::string joined;
    for (const auto& t : texts) {
        joined += t;
        joined += '\x1f';
    }
    std::string key = sha256_hex(config_.backend + "\x1f" + config_.embed_model + "\x1f" + joined);
    if (auto hit = cache_read(config_.cache_dir, config_.backend, key)) {
        std::lock_guard lock(impl_->mu);
        ++impl_->stats.cache_hits;
        return hit->at("rows").get<std::vector<std::vector<double>>>();
    }
    InFlight scope(*impl_);
    std::vector<std::vector<double>> rows;
    rows.reserve(texts.size());
    if (config_.backend == "offline") {
        for (const auto& t : texts)
            rows.push_back(offline_embed_one(t, config_.offline_embed_dim, config_.offline_seed));
    } else {
#ifndef TKGR_NO_HTTP
        json body{{"model", config_.embed_model}, {"input", texts}};
        json reply =
            with_retries(config_.retry, [&] { return http_post(config_, "/embeddings", body); });
        try {
            for (const auto& item : reply.at("data"))
                rows.push_back(item.at("embedding").get<std::vector<double>>());
        } catch (const json::exception&) {
            throw BackendError("gateway: embeddings reply lacks data[].embedding");
        }
#else
        throw TransportError("gateway: HTTP backend disabled in this build");
#endif
    }
    if (rows.size() != texts.size()) throw BackendError("gateway: embedding row count mismatch");
    for (const auto& r : rows) {
        if (r.size() != rows.front().size())
            throw BackendError("gateway: embedding dimension drift within batch");
        for (double v : r)
            if (!std::isfinite(v)) throw BackendError("gateway: non-finite embedding value");
    }
    impl_->record({estimate_tokens(joined), 0});
    cache_write(config_.cache_dir, config_.backend, key, json{{"rows", rows}});
    return rows;
}

}  // namespace tkgr::llm
