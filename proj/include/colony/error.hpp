#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace colony {

// All library errors derive from colony::error; the category string is the
// stable machine-parsable prefix used by the CLI ("colony: error: <category>: ...").
class error : public std::runtime_error {
public:
    error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

struct config_error : error {
    explicit config_error(const std::string& m) : error("config", m) {}
};

struct input_error : error {
    explicit input_error(const std::string& m) : error("input", m) {}
};

struct state_error : error {
    explicit state_error(const std::string& m) : error("state", m) {}
};

struct address_error : error {
    explicit address_error(const std::string& m) : error("address", m) {}
};

struct marriage_error : error {
    explicit marriage_error(const std::string& m) : error("marriage", m) {}
};

struct registry_error : error {
    explicit registry_error(const std::string& m) : error("registry", m) {}
};

struct eval_error : error {
    explicit eval_error(const std::string& m) : error("eval", m) {}
};

struct io_error : error {
    explicit io_error(const std::string& m) : error("io", m) {}
};

// Binary/file format violations carry the byte offset of the offending field.
class parse_error : public error {
public:
    parse_error(std::uint64_t byte_offset, const std::string& msg)
        : error("parse", msg + " (byte " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}
    std::uint64_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::uint64_t byte_offset_;
};

} // namespace colony
