// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "error.hpp"
#include "summary.hpp"

// DPL: a small indentation-based language for describing how an application
// branches on ML API output.
//
//   Recycle = ["Plastic", "Glass"]
//   labels = ml_api_labels()
//   for obj in labels:
//       if obj in Recycle:
//           return "recycle"
//   return "other"
//
// Statements: list assignment, ml_api_labels()/ml_api_score() bindings,
// for loops over a name or a list of names, if/elif/else, break, return,
// emit("..."), pass. Conditions: `a in b`, `x OP number`, `number OP x`, or
// two comparisons joined by `and`. Blocks are indented by four spaces and
// `#` starts a comment.
namespace dforge::dpl {

struct SourceFile {
    std::string path;
    std::string text;
};

/// Positions are informational and never participate in AST equality.
struct SourcePos {
    int line = 0;
    int column = 0;
    friend bool operator==(const SourcePos&, const SourcePos&) { return true; }
};

enum class Severity { Error, Warning };

struct Diagnostic {
    Severity severity = Severity::Error;
    std::string code;
    std::string message;
    int line = 1;
    int column = 1;
};

inline std::string format(const Diagnostic& d, std::string_view path) {
    return std::string(path) + ":" + std::to_string(d.line) + ":" + std::to_string(d.column) + ": " +
           (d.severity == Severity::Error ? "error" : "warning") + "[" + d.code + "]: " + d.message;
}

class ParseFailure : public Error {
public:
    explicit ParseFailure(Diagnostic d) : Error(d.code, d.message), diag_(std::move(d)) {}
    const Diagnostic& diagnostic() const noexcept { return diag_; }

private:
    Diagnostic diag_;
};

enum class ApiCallKind { Labels, Score };
enum class CmpOp { Lt, Le, Gt, Ge };

struct Compare {
    std::string name;
    CmpOp op = CmpOp::Ge;
    double value = 0.0;
    bool literal_first = false;  // written as `value OP name`
    friend bool operator==(const Compare&, const Compare&) = default;
};

struct Membership {
    std::string element;
    std::string collection;
    friend bool operator==(const Membership&, const Membership&) = default;
};

struct Conjunction {
    Compare left;
    Compare right;
    friend bool operator==(const Conjunction&, const Conjunction&) = default;
};

using Condition = std::variant<Membership, Compare, Conjunction>;

struct Stmt;
using Block = std::vector<Stmt>;

struct Assign {
    std::string name;
    std::vector<std::string> values;
    friend bool operator==(const Assign&, const Assign&) = default;
};

struct ApiCall {
    std::string name;
    ApiCallKind kind = ApiCallKind::Labels;
    friend bool operator==(const ApiCall&, const ApiCall&) = default;
};

struct For {
    std::string var;
    std::optional<std::string> iterable;  // `for x in name`
    std::vector<std::string> names;       // `for x in [a, b]`
    Block body;
    friend bool operator==(const For&, const For&) = default;
};

struct Arm {
    SourcePos pos;
    Condition cond;
    Block body;
    friend bool operator==(const Arm&, const Arm&) = default;
};

struct If {
    std::vector<Arm> arms;
    std::optional<Block> else_body;
    friend bool operator==(const If&, const If&) = default;
};

struct Break {
    friend bool operator==(const Break&, const Break&) = default;
};
struct Return {
    std::optional<std::string> value;
    friend bool operator==(const Return&, const Return&) = default;
};
struct Emit {
    std::string value;
    friend bool operator==(const Emit&, const Emit&) = default;
};
struct Pass {
    friend bool operator==(const Pass&, const Pass&) = default;
};

struct Stmt {
    SourcePos pos;
    std::variant<Assign, ApiCall, For, If, Break, Return, Emit, Pass> node;
    friend bool operator==(const Stmt&, const Stmt&) = default;
};

struct Program {
    Block body;
    friend bool operator==(const Program&, const Program&) = default;
};

namespace detail {

inline constexpr int kMaxDepth = 64;

inline bool valid_utf8(std::string_view s, std::size_t& bad) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t n = 0;
        if (c < 0x80) n = 0;
        else if ((c >> 5) == 0x6 && c >= 0xC2) n = 1;
        else if ((c >> 4) == 0xE) n = 2;
        else if ((c >> 3) == 0x1E && c <= 0xF4) n = 3;
        else {
            bad = i;
            return false;
        }
        if (i + n >= s.size() && n > 0) {
            bad = i;
            return false;
        }
        for (std::size_t k = 1; k <= n; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) {
                bad = i;
                return false;
            }
        }
        i += n + 1;
    }
    return true;
}

enum class Tok { Name, String, Number, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;  // name, decoded string, punctuation
    double number = 0.0;
    int column = 1;
};

struct Line {
    int number = 0;
    int indent = 0;
    std::vector<Token> tokens;
};

[[noreturn]] inline void fail(std::string code, std::string msg, int line, int col) {
    throw ParseFailure(Diagnostic{Severity::Error, std::move(code), std::move(msg), line, col});
}

inline bool is_name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::vector<Token> tokenize(std::string_view text, int line_no, int offset) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        const int col = offset + static_cast<int>(i) + 1;
        if (c == ' ') {
            ++i;
            continue;
        }
        if (c == '\t') fail("SYNTAX_ERROR", "tab characters are not allowed", line_no, col);
        if (is_name_start(c)) {
            std::size_t j = i;
            while (j < text.size() && is_name_char(text[j])) ++j;
            out.push_back({Tok::Name, std::string(text.substr(i, j - i)), 0.0, col});
            i = j;
            continue;
        }
        if (c == '"' || c == '\'') {
            std::string value;
            std::size_t j = i + 1;
            bool closed = false;
            while (j < text.size()) {
                const char d = text[j];
                if (d == c) {
                    closed = true;
                    ++j;
                    break;
                }
                if (d == '\\') {
                    if (j + 1 >= text.size()) break;
                    const char e = text[j + 1];
                    switch (e) {
                        case 'n': value.push_back('\n'); break;
                        case 't': value.push_back('\t'); break;
                        case '\\': case '"': case '\'': value.push_back(e); break;
                        default:
                            fail("SYNTAX_ERROR", std::string("unknown escape '\\") + e + "'", line_no,
                                 offset + static_cast<int>(j) + 1);
                    }
                    j += 2;
                    continue;
                }
                value.push_back(d);
                ++j;
            }
            if (!closed) fail("SYNTAX_ERROR", "unterminated string literal", line_no, col);
            out.push_back({Tok::String, std::move(value), 0.0, col});
            i = j;
            continue;
        }
        if (is_digit(c) || c == '.' || (c == '-' && i + 1 < text.size() && (is_digit(text[i + 1]) || text[i + 1] == '.'))) {
            std::size_t j = i + (c == '-' ? 1 : 0);
            while (j < text.size() && (is_digit(text[j]) || text[j] == '.')) ++j;
            if (j < text.size() && (text[j] == 'e' || text[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < text.size() && (text[k] == '+' || text[k] == '-')) ++k;
                if (k < text.size() && is_digit(text[k])) {
                    j = k;
                    while (j < text.size() && is_digit(text[j])) ++j;
                }
            }
            double v = 0.0;
            const char* first = text.data() + i;
            const char* last = text.data() + j;
            auto [ptr, ec] = std::from_chars(first, last, v);
            if (ec != std::errc() || ptr != last || !std::isfinite(v))
                fail("SYNTAX_ERROR", "malformed number '" + std::string(text.substr(i, j - i)) + "'", line_no, col);
            out.push_back({Tok::Number, std::string(text.substr(i, j - i)), v, col});
            i = j;
            continue;
        }
        if ((c == '<' || c == '>') && i + 1 < text.size() && text[i + 1] == '=') {
            out.push_back({Tok::Punct, std::string(text.substr(i, 2)), 0.0, col});
            i += 2;
            continue;
        }
        if (c == '=' && i + 1 < text.size() && text[i + 1] == '=')
            fail("SYNTAX_ERROR", "equality comparisons are not supported", line_no, col);
        if (std::string_view("()[],:=<>").find(c) != std::string_view::npos) {
            out.push_back({Tok::Punct, std::string(1, c), 0.0, col});
            ++i;
            continue;
        }
        fail("SYNTAX_ERROR", "unexpected character", line_no, col);
    }
    return out;
}

inline std::vector<Line> split_lines(std::string_view src) {
    std::vector<Line> lines;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= src.size()) {
        std::size_t nl = src.find('\n', pos);
        if (nl == std::string_view::npos) nl = src.size();
        std::string_view raw = src.substr(pos, nl - pos);
        ++line_no;
        pos = nl + 1;
        if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
        // strip comment outside strings
        char quote = 0;
        std::size_t cut = raw.size();
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const char c = raw[i];
            if (quote) {
                if (c == '\\') ++i;
                else if (c == quote) quote = 0;
            } else if (c == '"' || c == '\'') {
                quote = c;
            } else if (c == '#') {
                cut = i;
                break;
            }
        }
        raw = raw.substr(0, cut);
        std::size_t indent = 0;
        while (indent < raw.size() && raw[indent] == ' ') ++indent;
        if (indent < raw.size() && raw[indent] == '\t')
            fail("SYNTAX_ERROR", "tab characters are not allowed", line_no, static_cast<int>(indent) + 1);
        std::string_view rest = raw.substr(indent);
        while (!rest.empty() && rest.back() == ' ') rest.remove_suffix(1);
        if (rest.empty()) {
            if (nl == src.size()) break;
            continue;
        }
        Line l;
        l.number = line_no;
        l.indent = static_cast<int>(indent);
        l.tokens = tokenize(rest, line_no, static_cast<int>(indent));
        lines.push_back(std::move(l));
        if (nl == src.size()) break;
    }
    return lines;
}

inline bool is_keyword(std::string_view n) {
    static constexpr std::string_view kw[] = {"for", "in", "if", "elif", "else", "break", "return",
                                              "emit", "pass", "and", "ml_api_labels", "ml_api_score"};
    return std::find(std::begin(kw), std::end(kw), n) != std::end(kw);
}

class LineCursor {
public:
    LineCursor(const Line& l) : line_(l) {}

    const Token& peek() const {
        static const Token end{};
        return i_ < line_.tokens.size() ? line_.tokens[i_] : end;
    }
    int column() const {
        if (i_ < line_.tokens.size()) return line_.tokens[i_].column;
        if (line_.tokens.empty()) return line_.indent + 1;
        const auto& t = line_.tokens.back();
        return t.column + static_cast<int>(t.text.size());
    }
    bool at_end() const { return i_ >= line_.tokens.size(); }
    bool is_punct(std::string_view p) const { return peek().kind == Tok::Punct && peek().text == p; }
    bool is_word(std::string_view w) const { return peek().kind == Tok::Name && peek().text == w; }

    Token take() { return i_ < line_.tokens.size() ? line_.tokens[i_++] : Token{}; }

    [[noreturn]] void error(const std::string& msg) const { fail("SYNTAX_ERROR", msg, line_.number, column()); }

    void expect_punct(std::string_view p) {
        if (!is_punct(p)) error("expected '" + std::string(p) + "'");
        ++i_;
    }
    void expect_word(std::string_view w) {
        if (!is_word(w)) error("expected '" + std::string(w) + "'");
        ++i_;
    }
    std::string expect_name() {
        if (peek().kind != Tok::Name || is_keyword(peek().text)) error("expected a name");
        return line_.tokens[i_++].text;
    }
    std::string expect_string() {
        if (peek().kind != Tok::String) error("expected a string literal");
        return line_.tokens[i_++].text;
    }
    void expect_end() {
        if (!at_end()) error("unexpected '" + peek().text + "'");
    }
    int line() const { return line_.number; }

private:
    const Line& line_;
    std::size_t i_ = 0;
};

class Parser {
public:
    explicit Parser(std::vector<Line> lines) : lines_(std::move(lines)) {}

    Program run() {
        Program p;
        if (!lines_.empty() && lines_[0].indent != 0)
            fail("SYNTAX_ERROR", "unexpected indentation", lines_[0].number, 1);
        p.body = block(0, 0);
        if (pos_ < lines_.size())
            fail("SYNTAX_ERROR", "unexpected indentation", lines_[pos_].number, 1);
        return p;
    }

private:
    Block block(int indent, int depth) {
        if (depth > kMaxDepth) fail("SYNTAX_ERROR", "nesting too deep", lines_[pos_].number, 1);
        Block out;
        while (pos_ < lines_.size()) {
            const Line& l = lines_[pos_];
            if (l.indent < indent) break;
            if (l.indent > indent) fail("SYNTAX_ERROR", "unexpected indentation", l.number, 1);
            out.push_back(statement(depth));
        }
        return out;
    }

    Block child_block(const Line& header, int depth) {
        const int want = header.indent + 4;
        if (pos_ >= lines_.size() || lines_[pos_].indent <= header.indent)
            fail("SYNTAX_ERROR", "expected an indented block", header.number,
                 header.tokens.empty() ? 1 : header.tokens.back().column);
        if (lines_[pos_].indent != want)
            fail("SYNTAX_ERROR", "blocks must be indented by 4 spaces", lines_[pos_].number, 1);
        return block(want, depth + 1);
    }

    void use(const std::string& name, int line, int col) {
        if (!bound_.count(name)) fail("UNDEFINED_NAME", "name '" + name + "' is not defined", line, col);
    }

    static CmpOp to_op(const std::string& p, const LineCursor& c) {
        if (p == "<") return CmpOp::Lt;
        if (p == "<=") return CmpOp::Le;
        if (p == ">") return CmpOp::Gt;
        if (p == ">=") return CmpOp::Ge;
        c.error("expected a comparison operator");
    }

    static bool is_cmp(const Token& t) {
        return t.kind == Tok::Punct && (t.text == "<" || t.text == "<=" || t.text == ">" || t.text == ">=");
    }

    // term := NAME in NAME | NAME OP NUM | NUM OP NAME
    std::variant<Membership, Compare> term(LineCursor& c) {
        if (c.peek().kind == Tok::Number) {
            Compare cmp;
            cmp.literal_first = true;
            cmp.value = c.take().number;
            if (!is_cmp(c.peek())) c.error("expected a comparison operator");
            cmp.op = to_op(c.take().text, c);
            const int col = c.column();
            cmp.name = c.expect_name();
            use(cmp.name, c.line(), col);
            return cmp;
        }
        const int col = c.column();
        std::string lhs = c.expect_name();
        use(lhs, c.line(), col);
        if (c.is_word("in")) {
            c.take();
            const int col2 = c.column();
            std::string rhs = c.expect_name();
            use(rhs, c.line(), col2);
            return Membership{std::move(lhs), std::move(rhs)};
        }
        if (!is_cmp(c.peek())) c.error("expected 'in' or a comparison operator");
        Compare cmp;
        cmp.name = std::move(lhs);
        cmp.op = to_op(c.take().text, c);
        if (c.peek().kind != Tok::Number) c.error("expected a number");
        cmp.value = c.take().number;
        return cmp;
    }

    Condition condition(LineCursor& c) {
        auto first = term(c);
        if (!c.is_word("and")) {
            if (auto* m = std::get_if<Membership>(&first)) return *m;
            return std::get<Compare>(first);
        }
        c.take();
        auto second = term(c);
        if (!std::holds_alternative<Compare>(first) || !std::holds_alternative<Compare>(second))
            c.error("'and' joins two comparisons only");
        return Conjunction{std::get<Compare>(first), std::get<Compare>(second)};
    }

    Stmt statement(int depth) {
        const Line& l = lines_[pos_++];
        LineCursor c(l);
        Stmt s;
        s.pos = {l.number, l.indent + 1};
        const Token head = c.peek();
        if (head.kind != Tok::Name) c.error("expected a statement");

        if (head.text == "for") {
            c.take();
            For f;
            f.var = c.expect_name();
            c.expect_word("in");
            if (c.is_punct("[")) {
                c.take();
                while (true) {
                    const int col = c.column();
                    f.names.push_back(c.expect_name());
                    use(f.names.back(), l.number, col);
                    if (c.is_punct(",")) {
                        c.take();
                        continue;
                    }
                    break;
                }
                c.expect_punct("]");
            } else {
                const int col = c.column();
                f.iterable = c.expect_name();
                use(*f.iterable, l.number, col);
            }
            c.expect_punct(":");
            c.expect_end();
            bound_.insert(f.var);
            ++loop_depth_;
            f.body = child_block(l, depth);
            --loop_depth_;
            s.node = std::move(f);
            return s;
        }
        if (head.text == "if") {
            If node;
            c.take();
            Arm arm;
            arm.pos = {l.number, head.column};
            arm.cond = condition(c);
            c.expect_punct(":");
            c.expect_end();
            arm.body = child_block(l, depth);
            node.arms.push_back(std::move(arm));
            while (pos_ < lines_.size() && lines_[pos_].indent == l.indent && !lines_[pos_].tokens.empty() &&
                   lines_[pos_].tokens[0].kind == Tok::Name) {
                const Line& nl = lines_[pos_];
                const std::string& kw = nl.tokens[0].text;
                if (kw == "elif") {
                    ++pos_;
                    LineCursor ec(nl);
                    ec.take();
                    Arm a;
                    a.pos = {nl.number, nl.tokens[0].column};
                    a.cond = condition(ec);
                    ec.expect_punct(":");
                    ec.expect_end();
                    a.body = child_block(nl, depth);
                    node.arms.push_back(std::move(a));
                } else if (kw == "else") {
                    ++pos_;
                    LineCursor ec(nl);
                    ec.take();
                    ec.expect_punct(":");
                    ec.expect_end();
                    node.else_body = child_block(nl, depth);
                    break;
                } else {
                    break;
                }
            }
            s.node = std::move(node);
            return s;
        }
        if (head.text == "elif" || head.text == "else") c.error("'" + head.text + "' without a matching 'if'");
        if (head.text == "break") {
            c.take();
            c.expect_end();
            if (loop_depth_ == 0) c.error("'break' outside a loop");
            s.node = Break{};
            return s;
        }
        if (head.text == "return") {
            c.take();
            Return r;
            if (!c.at_end()) r.value = c.expect_string();
            c.expect_end();
            s.node = std::move(r);
            return s;
        }
        if (head.text == "emit") {
            c.take();
            c.expect_punct("(");
            Emit e{c.expect_string()};
            c.expect_punct(")");
            c.expect_end();
            s.node = std::move(e);
            return s;
        }
        if (head.text == "pass") {
            c.take();
            c.expect_end();
            s.node = Pass{};
            return s;
        }

        std::string name = c.expect_name();
        c.expect_punct("=");
        if (c.is_punct("[")) {
            c.take();
            Assign a;
            a.name = name;
            if (!c.is_punct("]")) {
                while (true) {
                    a.values.push_back(c.expect_string());
                    if (c.is_punct(",")) {
                        c.take();
                        continue;
                    }
                    break;
                }
            }
            c.expect_punct("]");
            c.expect_end();
            bound_.insert(name);
            s.node = std::move(a);
            return s;
        }
        if (c.is_word("ml_api_labels") || c.is_word("ml_api_score")) {
            const bool labels = c.take().text == "ml_api_labels";
            c.expect_punct("(");
            c.expect_punct(")");
            c.expect_end();
            bound_.insert(name);
            s.node = ApiCall{name, labels ? ApiCallKind::Labels : ApiCallKind::Score};
            return s;
        }
        c.error("expected a list literal, ml_api_labels() or ml_api_score()");
    }

    std::vector<Line> lines_;
    std::size_t pos_ = 0;
    int loop_depth_ = 0;
    std::set<std::string> bound_;
};

}  // namespace detail

/// Parses DPL source. Throws ParseFailure (SYNTAX_ERROR, UNDEFINED_NAME).
inline Program parse(const SourceFile& src) {
    std::size_t bad = 0;
    if (!detail::valid_utf8(src.text, bad)) {
        int line = 1, col = 1;
        for (std::size_t i = 0; i < bad && i < src.text.size(); ++i) {
            if (src.text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        detail::fail("SYNTAX_ERROR", "invalid UTF-8", line, col);
    }
    return detail::Parser(detail::split_lines(src.text)).run();
}

// ---------------------------------------------------------------- printing

namespace detail {

inline std::string quote(std::string_view s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out.push_back(c);
        }
    }
    return out + "\"";
}

inline std::string number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, p);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

inline std::string_view op_text(CmpOp op) {
    switch (op) {
        case CmpOp::Lt: return "<";
        case CmpOp::Le: return "<=";
        case CmpOp::Gt: return ">";
        case CmpOp::Ge: return ">=";
    }
    return "?";
}

inline std::string compare_text(const Compare& c) {
    if (c.literal_first) return number(c.value) + " " + std::string(op_text(c.op)) + " " + c.name;
    return c.name + " " + std::string(op_text(c.op)) + " " + number(c.value);
}

inline std::string condition_text(const Condition& c) {
    if (auto* m = std::get_if<Membership>(&c)) return m->element + " in " + m->collection;
    if (auto* k = std::get_if<Compare>(&c)) return compare_text(*k);
    const auto& j = std::get<Conjunction>(c);
    return compare_text(j.left) + " and " + compare_text(j.right);
}

inline void print_block(const Block& b, int indent, std::string& out);

inline void print_stmt(const Stmt& s, int indent, std::string& out) {
    const std::string pad(static_cast<std::size_t>(indent), ' ');
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Assign>) {
                out += pad + n.name + " = [";
                for (std::size_t i = 0; i < n.values.size(); ++i) out += (i ? ", " : "") + quote(n.values[i]);
                out += "]\n";
            } else if constexpr (std::is_same_v<T, ApiCall>) {
                out += pad + n.name + (n.kind == ApiCallKind::Labels ? " = ml_api_labels()\n" : " = ml_api_score()\n");
            } else if constexpr (std::is_same_v<T, For>) {
                out += pad + "for " + n.var + " in ";
                if (n.iterable) {
                    out += *n.iterable;
                } else {
                    out += "[";
                    for (std::size_t i = 0; i < n.names.size(); ++i) out += (i ? ", " : "") + n.names[i];
                    out += "]";
                }
                out += ":\n";
                print_block(n.body, indent + 4, out);
            } else if constexpr (std::is_same_v<T, If>) {
                for (std::size_t i = 0; i < n.arms.size(); ++i) {
                    out += pad + (i ? "elif " : "if ") + condition_text(n.arms[i].cond) + ":\n";
                    print_block(n.arms[i].body, indent + 4, out);
                }
                if (n.else_body) {
                    out += pad + "else:\n";
                    print_block(*n.else_body, indent + 4, out);
                }
            } else if constexpr (std::is_same_v<T, Break>) {
                out += pad + "break\n";
            } else if constexpr (std::is_same_v<T, Return>) {
                out += pad + "return" + (n.value ? " " + quote(*n.value) : std::string()) + "\n";
            } else if constexpr (std::is_same_v<T, Emit>) {
                out += pad + "emit(" + quote(n.value) + ")\n";
            } else {
                out += pad + "pass\n";
            }
        },
        s.node);
}

inline void print_block(const Block& b, int indent, std::string& out) {
    for (const auto& s : b) print_stmt(s, indent, out);
}

}  // namespace detail

inline std::string print(const Program& p) {
    std::string out;
    detail::print_block(p.body, 0, out);
    return out;
}

// ------------------------------------------------------------ intervals

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
    bool lo_inc = true;
    bool hi_inc = true;

    bool empty() const { return lo > hi || (lo == hi && !(lo_inc && hi_inc)); }
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Sorted, disjoint, non-adjacent intervals inside the score domain [-1, 1].
using IntervalSet = std::vector<Interval>;

inline IntervalSet score_domain() { return {Interval{}}; }

inline Interval intersect(const Interval& a, const Interval& b) {
    Interval r;
    if (a.lo > b.lo) {
        r.lo = a.lo;
        r.lo_inc = a.lo_inc;
    } else if (b.lo > a.lo) {
        r.lo = b.lo;
        r.lo_inc = b.lo_inc;
    } else {
        r.lo = a.lo;
        r.lo_inc = a.lo_inc && b.lo_inc;
    }
    if (a.hi < b.hi) {
        r.hi = a.hi;
        r.hi_inc = a.hi_inc;
    } else if (b.hi < a.hi) {
        r.hi = b.hi;
        r.hi_inc = b.hi_inc;
    } else {
        r.hi = a.hi;
        r.hi_inc = a.hi_inc && b.hi_inc;
    }
    return r;
}

inline IntervalSet normalize(IntervalSet s) {
    s.erase(std::remove_if(s.begin(), s.end(), [](const Interval& i) { return i.empty(); }), s.end());
    std::sort(s.begin(), s.end(), [](const Interval& a, const Interval& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.lo_inc && !b.lo_inc);
    });
    IntervalSet out;
    for (const auto& i : s) {
        if (!out.empty()) {
            auto& last = out.back();
            const bool touches = i.lo < last.hi || (i.lo == last.hi && (i.lo_inc || last.hi_inc));
            if (touches) {
                if (i.hi > last.hi || (i.hi == last.hi && i.hi_inc)) {
                    last.hi = i.hi;
                    last.hi_inc = i.hi_inc || (i.hi == last.hi && last.hi_inc);
                }
                continue;
            }
        }
        out.push_back(i);
    }
    return out;
}

inline IntervalSet intersect(const IntervalSet& a, const IntervalSet& b) {
    IntervalSet out;
    for (const auto& x : a)
        for (const auto& y : b) out.push_back(intersect(x, y));
    return normalize(std::move(out));
}

inline IntervalSet complement(const IntervalSet& s) {
    IntervalSet out;
    double lo = -1.0;
    bool lo_inc = true;
    for (const auto& i : normalize(s)) {
        out.push_back({lo, i.lo, lo_inc, !i.lo_inc});
        lo = i.hi;
        lo_inc = !i.hi_inc;
    }
    out.push_back({lo, 1.0, lo_inc, true});
    return normalize(std::move(out));
}

inline IntervalSet compare_set(const Compare& c) {
    CmpOp op = c.op;
    if (c.literal_first) {
        // `v < x` is `x > v`
        switch (op) {
            case CmpOp::Lt: op = CmpOp::Gt; break;
            case CmpOp::Le: op = CmpOp::Ge; break;
            case CmpOp::Gt: op = CmpOp::Lt; break;
            case CmpOp::Ge: op = CmpOp::Le; break;
        }
    }
    const double inf = std::numeric_limits<double>::infinity();
    Interval i;
    switch (op) {
        case CmpOp::Lt: i = {-inf, c.value, true, false}; break;
        case CmpOp::Le: i = {-inf, c.value, true, true}; break;
        case CmpOp::Gt: i = {c.value, inf, false, true}; break;
        case CmpOp::Ge: i = {c.value, inf, true, true}; break;
    }
    return intersect(score_domain(), normalize({i}));
}

// ------------------------------------------------------------ extraction

struct ExtractionResult {
    std::optional<DecisionSummary> summary;  // empty when the pattern is absent
    bool pattern_absent = false;
    std::vector<Diagnostic> diagnostics;

    bool has_errors() const {
        return std::any_of(diagnostics.begin(), diagnostics.end(),
                           [](const Diagnostic& d) { return d.severity == Severity::Error; });
    }
};

namespace detail {

enum class BindKind { List, ApiLabels, ApiScore, ApiLabelIter, ClassIter, ListIter };

struct Binding {
    BindKind kind = BindKind::List;
    std::vector<std::string> values;  // list contents, or list names for ClassIter
    int loop = -1;                    // binding loop for iterator variables
    int depth = -1;                   // nesting depth of that loop
};

struct LabelCondition {
    std::vector<std::string> lists;  // class list names in examination order
    std::optional<int> api_loop, api_depth, class_depth;
    bool exits = false;
    SourcePos pos;
};

struct RangeClass {
    std::string name;
    Interval range;
};

inline bool block_exits(const Block& b, bool inside_inner_loop) {
    for (const auto& s : b) {
        if (std::holds_alternative<Return>(s.node)) return true;
        if (std::holds_alternative<Break>(s.node) && !inside_inner_loop) return true;
        if (auto* f = std::get_if<For>(&s.node)) {
            if (block_exits(f->body, true)) return true;
        } else if (auto* i = std::get_if<If>(&s.node)) {
            for (const auto& a : i->arms)
                if (block_exits(a.body, inside_inner_loop)) return true;
            if (i->else_body && block_exits(*i->else_body, inside_inner_loop)) return true;
        }
    }
    return false;
}

inline std::optional<std::string> first_outcome(const Block& b) {
    for (const auto& s : b) {
        if (auto* r = std::get_if<Return>(&s.node); r && r->value) return r->value;
        if (auto* e = std::get_if<Emit>(&s.node)) return e->value;
        if (auto* f = std::get_if<For>(&s.node))
            if (auto v = first_outcome(f->body)) return v;
        if (auto* i = std::get_if<If>(&s.node)) {
            for (const auto& a : i->arms)
                if (auto v = first_outcome(a.body)) return v;
            if (i->else_body)
                if (auto v = first_outcome(*i->else_body)) return v;
        }
    }
    return std::nullopt;
}

class Extractor {
public:
    std::vector<LabelCondition> label_conditions;
    std::vector<RangeClass> range_classes;
    std::vector<Diagnostic> diags;
    std::map<std::string, std::vector<std::string>> lists;

    void walk(const Block& b, int depth) {
        for (const auto& s : b) stmt(s, depth);
    }

private:
    std::map<std::string, Binding> env_;
    int next_loop_ = 0;

    void error(const std::string& code, const std::string& msg, SourcePos p) {
        diags.push_back({Severity::Error, code, msg, p.line, p.column});
    }
    void warn(const std::string& code, const std::string& msg, SourcePos p) {
        diags.push_back({Severity::Warning, code, msg, p.line, p.column});
    }

    const Binding* lookup(const std::string& n) const {
        auto it = env_.find(n);
        return it == env_.end() ? nullptr : &it->second;
    }

    void stmt(const Stmt& s, int depth) {
        if (auto* a = std::get_if<Assign>(&s.node)) {
            env_[a->name] = Binding{BindKind::List, a->values};
            lists[a->name] = a->values;
        } else if (auto* c = std::get_if<ApiCall>(&s.node)) {
            env_[c->name] = Binding{c->kind == ApiCallKind::Labels ? BindKind::ApiLabels : BindKind::ApiScore, {}};
        } else if (auto* f = std::get_if<For>(&s.node)) {
            loop(*f, s.pos, depth);
        } else if (auto* i = std::get_if<If>(&s.node)) {
            chain(*i, depth);
        }
    }

    void loop(const For& f, SourcePos pos, int depth) {
        const int id = next_loop_++;
        Binding var;
        var.loop = id;
        var.depth = depth;
        if (f.iterable) {
            const Binding* it = lookup(*f.iterable);
            if (!it) {
                error("UNDEFINED_NAME", "name '" + *f.iterable + "' is not defined", pos);
                return;
            }
            switch (it->kind) {
                case BindKind::ApiLabels: var.kind = BindKind::ApiLabelIter; break;
                case BindKind::List: var.kind = BindKind::ListIter; break;
                default:
                    error("UNSUPPORTED_CONSTRUCT", "cannot iterate over '" + *f.iterable + "'", pos);
                    return;
            }
        } else {
            var.kind = BindKind::ClassIter;
            for (const auto& n : f.names) {
                const Binding* b = lookup(n);
                if (!b || b->kind != BindKind::List) {
                    error("UNSUPPORTED_CONSTRUCT", "'" + n + "' in a loop list must name a list literal", pos);
                    return;
                }
                var.values.push_back(n);
            }
        }
        env_[f.var] = var;
        walk(f.body, depth + 1);
    }

    static bool api_dependent(const Binding* b) {
        return b && (b->kind == BindKind::ApiLabels || b->kind == BindKind::ApiScore ||
                     b->kind == BindKind::ApiLabelIter);
    }

    // Label membership; returns false when the condition does not read the API.
    bool membership(const Membership& m, const Arm& arm, int depth, LabelCondition& out) {
        (void)depth;
        const Binding* e = lookup(m.element);
        const Binding* c = lookup(m.collection);
        if (!e || !c) {
            error("UNDEFINED_NAME", "condition references an unbound name", arm.pos);
            return false;
        }
        out.pos = arm.pos;
        if (e->kind == BindKind::ApiLabelIter && c->kind == BindKind::List) {
            out.lists = {m.collection};
            out.api_loop = e->loop;
            out.api_depth = e->depth;
            return true;
        }
        if (e->kind == BindKind::ApiLabelIter && c->kind == BindKind::ClassIter) {
            out.lists = c->values;
            out.api_loop = e->loop;
            out.api_depth = e->depth;
            out.class_depth = c->depth;
            return true;
        }
        if (e->kind == BindKind::List && c->kind == BindKind::ApiLabels) {
            out.lists = {m.element};
            return true;
        }
        if (e->kind == BindKind::ClassIter && c->kind == BindKind::ApiLabels) {
            out.lists = e->values;
            out.class_depth = e->depth;
            return true;
        }
        if (api_dependent(e) || api_dependent(c))
            error("UNSUPPORTED_CONSTRUCT", "membership test on API output is outside the supported forms", arm.pos);
        return false;
    }

    std::optional<IntervalSet> score_region(const Condition& cond, const Arm& arm) {
        auto check = [&](const Compare& c) -> bool {
            const Binding* b = lookup(c.name);
            if (!b) {
                error("UNDEFINED_NAME", "name '" + c.name + "' is not defined", arm.pos);
                return false;
            }
            if (b->kind != BindKind::ApiScore) {
                error("UNSUPPORTED_CONSTRUCT", "comparisons are only supported on an ml_api_score() binding", arm.pos);
                return false;
            }
            return true;
        };
        if (auto* c = std::get_if<Compare>(&cond)) {
            if (!check(*c)) return std::nullopt;
            return compare_set(*c);
        }
        const auto& j = std::get<Conjunction>(cond);
        if (!check(j.left) || !check(j.right)) return std::nullopt;
        if (j.left.name != j.right.name) {
            error("UNSUPPORTED_CONSTRUCT", "both comparisons must test the same score", arm.pos);
            return std::nullopt;
        }
        return intersect(compare_set(j.left), compare_set(j.right));
    }

    void add_range(const IntervalSet& region, const Block& body, SourcePos pos) {
        if (region.empty()) {
            warn("UNREACHABLE_BRANCH", "branch can never be taken", pos);
            return;
        }
        if (region.size() > 1) {
            error("UNSUPPORTED_CONSTRUCT", "branch covers a split range", pos);
            return;
        }
        RangeClass rc;
        rc.range = region.front();
        rc.name = first_outcome(body).value_or("range_" + std::to_string(range_classes.size() + 1));
        range_classes.push_back(std::move(rc));
    }

    void chain(const If& node, int depth) {
        IntervalSet taken;  // union of earlier score conditions in this chain
        bool score_chain = false;
        for (const auto& arm : node.arms) {
            if (std::holds_alternative<Membership>(arm.cond)) {
                LabelCondition lc;
                if (membership(std::get<Membership>(arm.cond), arm, depth, lc)) {
                    lc.exits = block_exits(arm.body, false);
                    label_conditions.push_back(std::move(lc));
                }
            } else if (auto region = score_region(arm.cond, arm)) {
                score_chain = true;
                add_range(intersect(*region, complement(taken)), arm.body, arm.pos);
                taken = normalize([&] {
                    IntervalSet u = taken;
                    u.insert(u.end(), region->begin(), region->end());
                    return u;
                }());
            }
            walk(arm.body, depth + 1);
        }
        if (node.else_body) {
            if (score_chain) {
                SourcePos pos = node.arms.back().pos;
                add_range(complement(taken), *node.else_body, pos);
            }
            walk(*node.else_body, depth + 1);
        }
    }
};

}  // namespace detail

/// Derives a decision summary from a parsed program.
inline ExtractionResult extract_summary(const Program& program, const std::string& app_id) {
    ExtractionResult res;
    detail::Extractor ex;
    ex.walk(program.body, 0);
    res.diagnostics = ex.diags;
    auto absent = [&](const std::string& msg) {
        res.pattern_absent = true;
        res.diagnostics.push_back({Severity::Warning, "PATTERN_ABSENT", msg, 1, 1});
        return res;
    };

    if (!ex.range_classes.empty() && !ex.label_conditions.empty()) {
        res.diagnostics.push_back({Severity::Error, "UNSUPPORTED_CONSTRUCT",
                                   "program mixes label-set and score-range conditions", 1, 1});
        return res;
    }
    if (res.has_errors()) return res;

    DecisionSummary s;
    s.app_id = app_id;
    if (!ex.range_classes.empty()) {
        s.api_kind = ApiKind::ScalarScore;
        s.decision_type = DecisionType::MultiChoiceAppOrder;
        for (const auto& rc : ex.range_classes)
            s.classes.push_back({rc.name, Range{rc.range.lo, rc.range.hi, rc.range.lo_inc, rc.range.hi_inc}});
    } else {
        if (ex.label_conditions.empty()) return absent("no branch condition depends on the ML API output");
        s.api_kind = ApiKind::LabelScores;
        std::vector<std::string> order;
        for (const auto& lc : ex.label_conditions)
            for (const auto& n : lc.lists)
                if (std::find(order.begin(), order.end(), n) == order.end()) order.push_back(n);
        for (const auto& n : order) {
            TargetClass c;
            c.name = n;
            LabelSet ids;
            for (const auto& v : ex.lists.at(n)) {
                auto id = s.find_label(v);
                if (!id) {
                    id = s.label_universe.size();
                    s.label_universe.push_back({*id, v});
                }
                ids.push_back(*id);
            }
            c.kind = std::move(ids);
            s.classes.push_back(std::move(c));
        }

        const bool exits = std::any_of(ex.label_conditions.begin(), ex.label_conditions.end(),
                                       [](const auto& lc) { return lc.exits; });
        if (s.classes.size() == 1) {
            s.decision_type = DecisionType::TrueFalse;
        } else if (!exits) {
            s.decision_type = DecisionType::MultiSelect;
        } else {
            std::optional<DecisionType> chosen;
            std::vector<int> api_loops;
            for (const auto& lc : ex.label_conditions)
                if (lc.api_loop && std::find(api_loops.begin(), api_loops.end(), *lc.api_loop) == api_loops.end())
                    api_loops.push_back(*lc.api_loop);
            for (const auto& lc : ex.label_conditions) {
                std::optional<DecisionType> t;
                if (lc.api_depth && lc.class_depth)
                    t = *lc.api_depth > *lc.class_depth ? DecisionType::MultiChoiceAppOrder
                                                        : DecisionType::MultiChoiceApiOrder;
                else if (lc.api_depth)
                    t = api_loops.size() > 1 ? DecisionType::MultiChoiceAppOrder : DecisionType::MultiChoiceApiOrder;
                else if (lc.class_depth)
                    t = DecisionType::MultiChoiceAppOrder;
                if (!t) continue;
                if (!chosen) {
                    chosen = t;
                } else if (*chosen != *t) {
                    res.diagnostics.push_back({Severity::Warning, "MIXED_ORDER",
                                               "conditions disagree on matching order; using the first",
                                               lc.pos.line, lc.pos.column});
                }
            }
            if (!chosen) {
                res.diagnostics.push_back({Severity::Warning, "SUGGEST_APP_ORDER",
                                           "an if/elif chain without loops usually encodes priority order "
                                           "(MultiChoiceAppOrder)",
                                           ex.label_conditions.front().pos.line,
                                           ex.label_conditions.front().pos.column});
                return absent("multi-choice label conditions without a loop over the API output or class lists");
            }
            s.decision_type = *chosen;
        }
    }
    for (const auto& v : validate(s))
        res.diagnostics.push_back({Severity::Warning, v.code, v.message, 1, 1});
    res.summary = std::move(s);
    return res;
}

/// Parse plus extraction; never throws on malformed input.
inline ExtractionResult analyze(const SourceFile& src, const std::string& app_id) {
    try {
        return extract_summary(parse(src), app_id);
    } catch (const ParseFailure& f) {
        ExtractionResult r;
        r.diagnostics.push_back(f.diagnostic());
        return r;
    }
}


namespace detail {

inline bool is_identifier(std::string_view n) {
    if (n.empty() || !is_name_start(n.front()) || is_keyword(n)) return false;
    return std::all_of(n.begin(), n.end(), is_name_char);
}

inline Stmt make(auto node) { return Stmt{SourcePos{}, std::move(node)}; }

inline Compare bound(double v, bool upper, bool inclusive) {
    // lower bounds print as `v <= score`, upper bounds as `score < v`
    if (upper) return Compare{"score", inclusive ? CmpOp::Le : CmpOp::Lt, v, false};
    return Compare{"score", inclusive ? CmpOp::Le : CmpOp::Lt, v, true};
}

}  // namespace detail

/// Writes a DPL program whose extracted summary equals `s`. Class names must
/// be identifiers for label-set summaries. Throws UNSYNTHESIZABLE otherwise.
inline Program synthesize(const DecisionSummary& s) {
    using namespace detail;
    Program p;
    if (s.api_kind == ApiKind::ScalarScore) {
        p.body.push_back(make(ApiCall{"score", ApiCallKind::Score}));
        If chain;
        for (const auto& c : s.classes) {
            const auto& r = c.range();
            Arm arm;
            arm.cond = Conjunction{bound(r.lower, false, r.lower_inclusive), bound(r.upper, true, r.upper_inclusive)};
            arm.body.push_back(make(Return{c.name}));
            chain.arms.push_back(std::move(arm));
        }
        p.body.push_back(make(std::move(chain)));
        return p;
    }

    std::vector<std::string> names;
    for (const auto& c : s.classes) {
        if (!is_identifier(c.name) || c.name == "labels" || c.name == "x" || c.name == "W")
            throw Error("UNSYNTHESIZABLE", "class name '" + c.name + "' is not a usable identifier");
        Assign a{c.name, {}};
        for (LabelId id : c.labels()) a.values.push_back(s.label_universe.at(id).name);
        p.body.push_back(make(std::move(a)));
        names.push_back(c.name);
    }
    p.body.push_back(make(ApiCall{"labels", ApiCallKind::Labels}));

    auto membership_if = [](const std::string& elem, const std::string& coll, Stmt exit) {
        If i;
        Arm arm;
        arm.cond = Membership{elem, coll};
        arm.body.push_back(std::move(exit));
        i.arms.push_back(std::move(arm));
        return make(std::move(i));
    };

    For outer;
    switch (s.decision_type) {
        case DecisionType::TrueFalse:
            outer = For{"x", "labels", {}, {membership_if("x", names.front(), make(Return{names.front()}))}};
            break;
        case DecisionType::MultiSelect:
            outer = For{"x", "labels", {}, {}};
            for (const auto& n : names) outer.body.push_back(membership_if("x", n, make(Emit{n})));
            break;
        case DecisionType::MultiChoiceAppOrder: {
            For inner{"x", "labels", {}, {membership_if("x", "W", make(Return{"matched"}))}};
            outer = For{"W", std::nullopt, names, {make(std::move(inner))}};
            break;
        }
        case DecisionType::MultiChoiceApiOrder: {
            If chain;
            for (const auto& n : names) {
                Arm arm;
                arm.cond = Membership{"x", n};
                arm.body.push_back(make(Return{n}));
                chain.arms.push_back(std::move(arm));
            }
            outer = For{"x", "labels", {}, {make(std::move(chain))}};
            break;
        }
    }
    p.body.push_back(make(std::move(outer)));
    p.body.push_back(make(Return{"others"}));
    return p;
}

}  // namespace dforge::dpl
