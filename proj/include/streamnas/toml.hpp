#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "streamnas/errors.hpp"

namespace streamnas {
namespace toml {

/// Minimal TOML reader covering the subset the run configs use: tables,
/// arrays of tables, strings, integers, floats, booleans and flat arrays.
/// Dotted keys inside a table and multi-line values are not supported.

class Value;
using ValuePtr = std::shared_ptr<Value>;

class Value {
public:
    using Array = std::vector<ValuePtr>;
    using Table = std::map<std::string, ValuePtr>;
    using Data = std::variant<std::string, std::int64_t, double, bool, Array, Table>;

    Value() : data_(Table{}) {}
    explicit Value(Data data) : data_(std::move(data)) {}

    bool is_table() const { return std::holds_alternative<Table>(data_); }
    bool is_array() const { return std::holds_alternative<Array>(data_); }
    bool is_string() const { return std::holds_alternative<std::string>(data_); }
    bool is_integer() const { return std::holds_alternative<std::int64_t>(data_); }
    bool is_float() const { return std::holds_alternative<double>(data_); }
    bool is_bool() const { return std::holds_alternative<bool>(data_); }

    Table& table() { return std::get<Table>(data_); }
    const Table& table() const { return std::get<Table>(data_); }
    Array& array() { return std::get<Array>(data_); }
    const Array& array() const { return std::get<Array>(data_); }

    const std::string& as_string() const { return std::get<std::string>(data_); }
    std::int64_t as_integer() const {
        if (is_float()) return static_cast<std::int64_t>(std::get<double>(data_));
        return std::get<std::int64_t>(data_);
    }
    double as_float() const {
        if (is_integer()) return static_cast<double>(std::get<std::int64_t>(data_));
        return std::get<double>(data_);
    }
    bool as_bool() const { return std::get<bool>(data_); }

    bool contains(const std::string& key) const {
        return is_table() && table().count(key) > 0;
    }

    const Value& at(const std::string& key) const {
        auto it = table().find(key);
        if (it == table().end()) throw IoError("toml: missing key '" + key + "'");
        return *it->second;
    }

    // Typed lookups with defaults, the common access pattern for configs.
    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        return contains(key) ? at(key).as_string() : fallback;
    }
    std::int64_t get_integer(const std::string& key, std::int64_t fallback = 0) const {
        return contains(key) ? at(key).as_integer() : fallback;
    }
    double get_float(const std::string& key, double fallback = 0.0) const {
        return contains(key) ? at(key).as_float() : fallback;
    }
    bool get_bool(const std::string& key, bool fallback = false) const {
        return contains(key) ? at(key).as_bool() : fallback;
    }

private:
    Data data_;
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string text) : text_(std::move(text)) {}

    Value parse() {
        Value root;
        Value* current = &root;
        while (!at_end()) {
            skip_blank_and_comments();
            if (at_end()) break;
            if (peek() == '[') {
                current = parse_table_header(root);
            } else {
                auto [key, value] = parse_key_value();
                if (current->table().count(key))
                    fail("duplicate key '" + key + "'");
                current->table()[key] = std::make_shared<Value>(std::move(value));
            }
            skip_spaces();
            if (!at_end() && peek() == '#') skip_line();
            if (!at_end() && peek() == '\n') advance();
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw IoError("toml: " + msg + " at line " + std::to_string(line_));
    }

    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    char advance() {
        char c = text_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    void skip_spaces() {
        while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) advance();
    }

    void skip_line() {
        while (!at_end() && peek() != '\n') advance();
    }

    void skip_blank_and_comments() {
        for (;;) {
            skip_spaces();
            if (at_end()) return;
            if (peek() == '#') {
                skip_line();
            } else if (peek() == '\n') {
                advance();
            } else {
                return;
            }
        }
    }

    std::string parse_key() {
        skip_spaces();
        if (!at_end() && peek() == '"') return parse_basic_string();
        std::string key;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' ||
                             peek() == '-')) {
            key += advance();
        }
        if (key.empty()) fail("expected a key");
        return key;
    }

    std::vector<std::string> parse_dotted_name() {
        std::vector<std::string> parts{parse_key()};
        skip_spaces();
        while (!at_end() && peek() == '.') {
            advance();
            parts.push_back(parse_key());
            skip_spaces();
        }
        return parts;
    }

    Value* parse_table_header(Value& root) {
        advance();  // '['
        const bool array_of_tables = !at_end() && peek() == '[';
        if (array_of_tables) advance();
        auto parts = parse_dotted_name();
        skip_spaces();
        if (at_end() || advance() != ']') fail("expected ']'");
        if (array_of_tables && (at_end() || advance() != ']')) fail("expected ']]'");

        Value* node = &root;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const bool last = i + 1 == parts.size();
            auto& tbl = node->table();
            if (last && array_of_tables) {
                auto it = tbl.find(parts[i]);
                if (it == tbl.end())
                    it = tbl.emplace(parts[i], std::make_shared<Value>(Value::Data(Value::Array{})))
                             .first;
                if (!it->second->is_array()) fail("'" + parts[i] + "' is not an array of tables");
                it->second->array().push_back(std::make_shared<Value>());
                node = it->second->array().back().get();
            } else {
                auto it = tbl.find(parts[i]);
                if (it == tbl.end()) it = tbl.emplace(parts[i], std::make_shared<Value>()).first;
                Value* next = it->second.get();
                // Header path through an array of tables addresses its last entry.
                if (next->is_array() && !next->array().empty()) next = next->array().back().get();
                if (!next->is_table()) fail("'" + parts[i] + "' is not a table");
                node = next;
            }
        }
        return node;
    }

    std::pair<std::string, Value> parse_key_value() {
        std::string key = parse_key();
        skip_spaces();
        if (at_end() || advance() != '=') fail("expected '=' after key '" + key + "'");
        skip_spaces();
        return {key, parse_value()};
    }

    Value parse_value() {
        if (at_end()) fail("expected a value");
        const char c = peek();
        if (c == '"') return Value(Value::Data(parse_basic_string()));
        if (c == '[') return parse_array();
        if (c == 't' || c == 'f') return parse_bool();
        return parse_number();
    }

    std::string parse_basic_string() {
        advance();  // opening quote
        std::string out;
        while (!at_end() && peek() != '"') {
            char c = advance();
            if (c == '\\') {
                if (at_end()) fail("unterminated escape");
                const char esc = advance();
                switch (esc) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + esc);
                }
            } else if (c == '\n') {
                fail("unterminated string");
            } else {
                out += c;
            }
        }
        if (at_end()) fail("unterminated string");
        advance();  // closing quote
        return out;
    }

    Value parse_array() {
        advance();  // '['
        Value::Array items;
        for (;;) {
            skip_blank_and_comments();
            if (at_end()) fail("unterminated array");
            if (peek() == ']') {
                advance();
                break;
            }
            items.push_back(std::make_shared<Value>(parse_value()));
            skip_blank_and_comments();
            if (!at_end() && peek() == ',') advance();
        }
        return Value(Value::Data(std::move(items)));
    }

    Value parse_bool() {
        if (text_.compare(pos_, 4, "true") == 0) {
            pos_ += 4;
            return Value(Value::Data(true));
        }
        if (text_.compare(pos_, 5, "false") == 0) {
            pos_ += 5;
            return Value(Value::Data(false));
        }
        fail("expected a boolean");
    }

    Value parse_number() {
        std::string token;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' ||
                             peek() == '-' || peek() == '.' || peek() == '_')) {
            char c = advance();
            if (c != '_') token += c;
        }
        if (token.empty()) fail("expected a number");
        const bool is_float = token.find_first_of(".eE") != std::string::npos ||
                              token == "inf" || token == "-inf" || token == "nan";
        try {
            if (is_float) return Value(Value::Data(std::stod(token)));
            return Value(Value::Data(static_cast<std::int64_t>(std::stoll(token))));
        } catch (const std::exception&) {
            fail("malformed number '" + token + "'");
        }
    }

    std::string text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

}  // namespace detail

inline Value parse(const std::string& text) { return detail::Parser(text).parse(); }

inline Value parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("toml: cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

}  // namespace toml
}  // namespace streamnas
