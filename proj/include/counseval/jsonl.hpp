#pragma once

#include <fstream>
#include <functional>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace counseval {

struct JsonlError : std::runtime_error {
    JsonlError(std::size_t line_no, const std::string& reason)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + reason), line(line_no) {}
    std::size_t line;
};

// Calls fn(line_no, record) for every non-blank line; line numbers are 1-based.
inline void for_each_jsonl(std::istream& in,
                           const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw JsonlError(line_no, std::string("invalid JSON: ") + e.what());
        }
        fn(line_no, rec);
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

} // namespace counseval
