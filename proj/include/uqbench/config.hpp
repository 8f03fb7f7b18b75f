#pragma once

// Reader for the subset of TOML used by experiment configs: comments,
// [table] and [a.b] headers, bare/quoted/dotted keys, basic and literal
// strings, integers, floats (incl. inf/nan), booleans, arrays (may span
// lines) and inline tables. Documents are returned as nlohmann::json.

#include "uqbench/core.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <string>

namespace uqbench {

namespace detail {

class TomlParser {
 public:
  explicit TomlParser(std::string text) : s_(std::move(text)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (peek() == '[') fail("arrays of tables are not supported");
        skip_inline_ws();
        const std::vector<std::string> path = parse_key_path();
        skip_inline_ws();
        expect(']');
        end_of_line();
        table = &open_table(root, path, true);
      } else {
        const std::vector<std::string> path = parse_key_path();
        skip_inline_ws();
        expect('=');
        skip_inline_ws();
        assign(*table, path, parse_value());
        end_of_line();
      }
    }
    return root;
  }

 private:
  std::string s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::vector<std::string> defined_tables_;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }
  void skip_ws_comments_newlines() {
    while (!eof()) {
      skip_inline_ws();
      skip_comment();
      if (peek() == '\r') ++pos_;
      if (peek() == '\n') {
        ++pos_;
        ++line_;
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (eof()) return;
    if (peek() != '\n') fail("unexpected text after value");
    ++pos_;
    ++line_;
  }

  static bool bare_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  }

  std::string parse_key() {
    if (peek() == '"') return parse_basic_string();
    if (peek() == '\'') return parse_literal_string();
    const std::size_t start = pos_;
    while (!eof() && bare_key_char(peek())) ++pos_;
    if (pos_ == start) fail("expected a key");
    return s_.substr(start, pos_ - start);
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    skip_inline_ws();
    while (peek() == '.') {
      ++pos_;
      skip_inline_ws();
      path.push_back(parse_key());
      skip_inline_ws();
    }
    return path;
  }

  static std::string join(const std::vector<std::string>& path) {
    std::string out;
    for (const auto& p : path) out += (out.empty() ? "" : ".") + p;
    return out;
  }

  nlohmann::json& open_table(nlohmann::json& root, const std::vector<std::string>& path, bool header) {
    if (header) {
      const std::string name = join(path);
      if (std::find(defined_tables_.begin(), defined_tables_.end(), name) != defined_tables_.end()) {
        fail("table [" + name + "] defined twice");
      }
      defined_tables_.push_back(name);
    }
    nlohmann::json* t = &root;
    for (const auto& key : path) {
      if (!t->contains(key)) (*t)[key] = nlohmann::json::object();
      t = &(*t)[key];
      if (!t->is_object()) fail("key '" + key + "' is not a table");
    }
    return *t;
  }

  void assign(nlohmann::json& table, const std::vector<std::string>& path, nlohmann::json value) {
    nlohmann::json& parent = open_table(table, {path.begin(), path.end() - 1}, false);
    if (parent.contains(path.back())) fail("duplicate key '" + join(path) + "'");
    parent[path.back()] = std::move(value);
  }

  std::string parse_basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) fail("unterminated escape");
      switch (s_[pos_++]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: fail("unsupported escape sequence");
      }
    }
    return out;
  }

  std::string parse_literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (peek() != '\'') fail("unterminated literal string");
    std::string out = s_.substr(start, pos_ - start);
    ++pos_;
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"') return parse_basic_string();
    if (c == '\'') return parse_literal_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    const std::size_t start = pos_;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' &&
           peek() != '}' && peek() != '#') {
      ++pos_;
    }
    const std::string tok = s_.substr(start, pos_ - start);
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    return parse_number(tok);
  }

  nlohmann::json parse_number(std::string tok) {
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    std::string body = tok;
    if (!body.empty() && (body[0] == '+' || body[0] == '-')) body.erase(0, 1);
    if (body == "inf") return tok[0] == '-' ? -INFINITY : INFINITY;
    if (body == "nan") return NAN;
    const bool is_float = body.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(tok, &used);
        if (used == tok.size()) return v;
      } else {
        const long long v = std::stoll(tok, &used, 10);
        if (used == tok.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value '" + tok + "'");
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ']') {
        fail("expected ',' or ']' in array");
      }
    }
  }

  nlohmann::json parse_inline_table() {
    expect('{');
    nlohmann::json t = nlohmann::json::object();
    skip_inline_ws();
    if (peek() == '}') {
      ++pos_;
      return t;
    }
    while (true) {
      skip_inline_ws();
      const std::vector<std::string> path = parse_key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      assign(t, path, parse_value());
      skip_inline_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() == '}') {
        ++pos_;
        return t;
      } else {
        fail("expected ',' or '}' in inline table");
      }
    }
  }
};

}  // namespace detail

inline nlohmann::json parse_toml(const std::string& text) { return detail::TomlParser(text).parse(); }

inline nlohmann::json load_toml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

// ---------------------------------------------------------------------------
// Typed lookups. Each reader consumes known keys so leftovers can be reported.

class ConfigTable {
 public:
  ConfigTable(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("[" + name_ + "] must be a table");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const std::string& name() const { return name_; }

  ConfigTable table(const std::string& key) const {
    static const nlohmann::json empty = nlohmann::json::object();
    mark(key);
    return ConfigTable(has(key) ? j_.at(key) : empty, name_.empty() ? key : name_ + "." + key);
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return number_at(key);
  }
  double number(const std::string& key) const {
    require(key);
    return number_at(key);
  }
  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    return v.get<long long>();
  }
  std::size_t count(const std::string& key, std::size_t fallback, std::size_t min_value = 0) const {
    const long long v = integer(key, static_cast<long long>(fallback));
    if (v < static_cast<long long>(min_value)) {
      throw ConfigError(where(key) + " must be >= " + std::to_string(min_value));
    }
    return static_cast<std::size_t>(v);
  }
  std::uint64_t u64(const std::string& key) const {
    require(key);
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(where(key) + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    if (!j_.at(key).is_boolean()) throw ConfigError(where(key) + " must be true or false");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
    return j_.at(key).get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be an array");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where(key) + " must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be an array");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 1) throw ConfigError(where(key) + " must contain positive integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& key, std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be an array");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(where(key) + " must contain strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  /// Throws on any key that no reader asked for.
  void reject_unknown() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        throw ConfigError("unknown key " + where(key));
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  mutable std::vector<std::string> used_;

  std::string where(const std::string& key) const { return "'" + (name_.empty() ? key : name_ + "." + key) + "'"; }
  void mark(const std::string& key) const {
    if (std::find(used_.begin(), used_.end(), key) == used_.end()) used_.push_back(key);
  }
  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required key " + where(key));
  }
  double number_at(const std::string& key) const {
    mark(key);
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    return v.get<double>();
  }
};

}  // namespace uqbench
