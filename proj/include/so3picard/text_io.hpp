#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace so3picard {

/// Malformed input file. `line()` is 1-based; 0 means "no particular line".
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace textio {

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw std::runtime_error("cannot format double");
    return std::string(buf.data(), end);
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && end == s.data() + s.size();
}

/// Drops a '#' comment and trims whitespace.
inline std::string_view strip(std::string_view line) {
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto ws = " \t\r\n";
    const auto b = line.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = line.find_last_not_of(ws);
    return line.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t b = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

/// Parses exactly N whitespace-separated doubles or throws ParseError.
template <std::size_t N>
std::array<double, N> parse_fields(std::string_view line, std::size_t line_no) {
    const auto tok = split_ws(line);
    if (tok.size() != N)
        throw ParseError(line_no, "expected " + std::to_string(N) + " fields, got " + std::to_string(tok.size()));
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i)
        if (!parse_double(tok[i], out[i]))
            throw ParseError(line_no, "not a number: '" + std::string(tok[i]) + "'");
    return out;
}

}  // namespace textio
}  // namespace so3picard
