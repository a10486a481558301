#include "nfebench/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return true;
}

// Drops a trailing comment, ignoring '#' inside double-quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

class ValueParser {
public:
    ValueParser(std::string_view text, int line) : s_(text), line_(line) {}

    nlohmann::json parse() {
        nlohmann::json v = value();
        skip_ws();
        if (pos_ != s_.size()) fail("unexpected trailing characters '" + std::string(s_.substr(pos_)) + "'");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(line_, msg); }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    nlohmann::json value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return string();
        if (c == '[') return array();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

    nlohmann::json string() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) fail("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            }
            out.push_back(c);
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return out;
    }

    nlohmann::json array() {
        ++pos_;
        nlohmann::json arr = nlohmann::json::array();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return arr;
        }
        for (;;) {
            arr.push_back(value());
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    return arr;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return arr;
            }
            fail("expected ',' or ']' in array");
        }
    }

    nlohmann::json number() {
        std::size_t end = pos_;
        while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                                   s_[end] == '-' || s_[end] == '+' || s_[end] == '_'))
            ++end;
        std::string tok(s_.substr(pos_, end - pos_));
        std::erase(tok, '_');
        if (tok.empty()) fail("invalid value");
        const bool is_float = tok.find_first_of(".eE") != std::string::npos && tok.rfind("0x", 0) != 0;
        const char* first = tok.data() + (tok[0] == '+' ? 1 : 0);
        const char* last = tok.data() + tok.size();
        if (is_float) {
            double d = 0.0;
            auto [p, ec] = std::from_chars(first, last, d);
            if (ec != std::errc() || p != last) fail("invalid number '" + tok + "'");
            pos_ = end;
            return d;
        }
        std::int64_t i = 0;
        auto [p, ec] = std::from_chars(first, last, i);
        if (ec != std::errc() || p != last) fail("invalid value '" + tok + "'");
        pos_ = end;
        return i;
    }

    std::string_view s_;
    int line_;
    std::size_t pos_ = 0;
};

}  // namespace

bool ConfigDoc::has(const std::string& sec, const std::string& key) const {
    return root.contains(sec) && root.at(sec).contains(key);
}

const nlohmann::json& ConfigDoc::section(const std::string& name) const {
    static const nlohmann::json empty = nlohmann::json::object();
    return root.contains(name) ? root.at(name) : empty;
}

int ConfigDoc::line_of(const std::string& sec, const std::string& key) const {
    auto it = lines.find(sec + "." + key);
    return it == lines.end() ? 0 : it->second;
}

ConfigDoc parse_config(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(line_no, "malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (!valid_key(section)) throw ConfigError(line_no, "invalid section name '" + section + "'");
            if (doc.root.contains(section)) throw ConfigError(line_no, "duplicate section [" + section + "]");
            doc.root[section] = nlohmann::json::object();
            doc.lines["[" + section + "]"] = line_no;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(line_no, "expected 'key = value'");
        std::string key = trim(std::string_view(line).substr(0, eq));
        if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
        if (!valid_key(key)) throw ConfigError(line_no, "invalid key '" + key + "'");
        nlohmann::json& sec = doc.root[section];
        if (sec.is_null()) sec = nlohmann::json::object();
        if (sec.contains(key)) throw ConfigError(line_no, "duplicate key '" + key + "'");
        sec[key] = ValueParser(std::string_view(line).substr(eq + 1), line_no).parse();
        doc.lines[section + "." + key] = line_no;
    }
    return doc;
}

ConfigDoc load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

const std::set<std::string>& known_config_sections() {
    static const std::set<std::string> names{"run",    "data",   "model",   "schedule",    "cd",
                                             "reflow", "bespoke", "sweep", "checkpoints", "transforms"};
    return names;
}

void reject_unknown_sections(const ConfigDoc& doc) {
    for (const auto& [sec, body] : doc.root.items()) {
        if (known_config_sections().count(sec)) continue;
        if (sec.empty()) {
            if (body.empty()) continue;
            throw ConfigError(doc.line_of("", body.begin().key()), "keys must sit under a [section] header");
        }
        auto it = doc.lines.find("[" + sec + "]");
        throw ConfigError(it == doc.lines.end() ? 0 : it->second, "unknown section [" + sec + "]");
    }
}

}  // namespace nfe
