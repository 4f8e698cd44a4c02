#pragma once

#include <chrono>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace counseval {

// Connection settings for any remote provider (chat completion, silver
// labeling, NER spans). Secrets come from the environment, never the config.
struct EndpointConfig {
    std::string base_url;
    std::string auth_token_env;
    double timeout_s = 30.0;
    int max_retries = 3;
    int max_parallel = 4;
    std::string model_name;
    double backoff_base_s = 0.25; // delay doubles per attempt; tests set 0

    void validate() const {
        if (base_url.empty()) throw std::invalid_argument("endpoint: base_url required");
        if (timeout_s <= 0) throw std::invalid_argument("endpoint: timeout must be > 0");
        if (max_retries < 0) throw std::invalid_argument("endpoint: retries must be >= 0");
        if (max_parallel < 1) throw std::invalid_argument("endpoint: parallel must be >= 1");
    }
};

struct HttpError : std::runtime_error {
    HttpError(const std::string& what, int status_code = 0)
        : std::runtime_error(what), status(status_code) {}
    int status;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port;
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    ParsedUrl p;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("invalid URL: " + url);
    p.scheme = url.substr(0, scheme_end);
    if (p.scheme != "http" && p.scheme != "https")
        throw std::invalid_argument("unsupported URL scheme: " + p.scheme);
    auto rest = url.substr(scheme_end + 3);
    auto path_start = rest.find('/');
    std::string hostport = path_start == std::string::npos ? rest : rest.substr(0, path_start);
    p.path = path_start == std::string::npos ? "/" : rest.substr(path_start);
    auto colon = hostport.rfind(':');
    if (colon != std::string::npos) {
        p.host = hostport.substr(0, colon);
        p.port = std::stoi(hostport.substr(colon + 1));
    } else {
        p.host = hostport;
        p.port = p.scheme == "https" ? 443 : 80;
    }
    if (p.host.empty()) throw std::invalid_argument("invalid URL host: " + url);
    return p;
}

// POST a JSON body to the endpoint's base_url, retrying transport failures,
// 429 and 5xx with exponential backoff. Returns the parsed response body.
inline nlohmann::json post_json(const EndpointConfig& ep, const nlohmann::json& body) {
    ep.validate();
    const ParsedUrl url = parse_url(ep.base_url);
    if (url.scheme == "https")
        throw HttpError("https endpoints are not supported in this build; use a local proxy");

    httplib::Client client(url.host, url.port);
    const auto timeout = std::chrono::milliseconds(static_cast<long long>(ep.timeout_s * 1000));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!ep.auth_token_env.empty()) {
        if (const char* token = std::getenv(ep.auth_token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    const std::string payload = body.dump();
    std::string last_error = "no attempts made";
    int last_status = 0;
    for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
        if (attempt > 0 && ep.backoff_base_s > 0) {
            const double delay = ep.backoff_base_s * static_cast<double>(1LL << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        last_status = res->status;
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw HttpError("HTTP " + std::to_string(res->status) + " from " + ep.base_url,
                            res->status);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw HttpError(std::string("unparseable response body: ") + e.what(), res->status);
        }
    }
    throw HttpError("request to " + ep.base_url + " failed after " +
                        std::to_string(ep.max_retries + 1) + " attempts (" + last_error + ")",
                    last_status);
}

} // namespace counseval
