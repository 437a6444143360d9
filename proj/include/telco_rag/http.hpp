#pragma once

// Thin helpers around cpp-httplib shared by the embedding, chat, search and
// fetch clients.

#include <string>
#include <string_view>

#include <httplib.h>

// <resolv.h>, pulled in by httplib, defines `_res` as a macro, which breaks
// Eigen headers included afterwards.
#ifdef _res
#undef _res
#endif

#include "error.hpp"

namespace telco_rag {

struct Url {
    std::string scheme; // "http" or "https"
    std::string host;
    int port = 0;
    std::string path; // always starts with '/'; includes the query string

    std::string origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

inline Url parse_url(std::string_view raw) {
    Url u;
    const auto sep = raw.find("://");
    if (sep == std::string_view::npos) throw ArgumentError("url without scheme: " + std::string(raw));
    u.scheme = std::string(raw.substr(0, sep));
    if (u.scheme != "http" && u.scheme != "https") throw ArgumentError("unsupported url scheme: " + u.scheme);
    std::string_view rest = raw.substr(sep + 3);
    const auto slash = rest.find_first_of("/?#");
    std::string_view authority = rest.substr(0, slash);
    u.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    if (!u.path.empty() && u.path[0] != '/') u.path.insert(0, "/");
    if (const auto hash = u.path.find('#'); hash != std::string::npos) u.path.resize(hash);
    if (authority.empty()) throw ArgumentError("url without host: " + std::string(raw));
    const auto colon = authority.rfind(':');
    if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
        u.host = std::string(authority.substr(0, colon));
        try {
            u.port = std::stoi(std::string(authority.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ArgumentError("bad port in url: " + std::string(raw));
        }
    } else {
        u.host = std::string(authority);
        u.port = u.scheme == "https" ? 443 : 80;
    }
    if (u.host.empty()) throw ArgumentError("url without host: " + std::string(raw));
    return u;
}

inline std::string url_host(std::string_view raw) {
    try {
        return parse_url(raw).host;
    } catch (const Error&) {
        return std::string(raw);
    }
}

inline httplib::Client make_http_client(const Url& u, int timeout_seconds) {
    httplib::Client cli(u.origin());
    cli.set_connection_timeout(timeout_seconds, 0);
    cli.set_read_timeout(timeout_seconds, 0);
    cli.set_write_timeout(timeout_seconds, 0);
    return cli;
}

/// Maps a transport failure or non-2xx status to ProviderError.
inline httplib::Response require_ok(const httplib::Result& res, std::string_view what) {
    if (!res) throw ProviderError(std::string(what) + ": " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw ProviderError(std::string(what) + ": HTTP " + std::to_string(res->status));
    return *res;
}

} // namespace telco_rag
