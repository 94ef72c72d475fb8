#include "lowreg/expression.hpp"

#include "lowreg/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>

namespace lowreg {

struct Expression::Node {
  enum class Kind { Constant, Variable, Negate, Add, Sub, Mul, Div, Pow, Call1, Call2 } kind;
  double value = 0.0;
  int variable = 0;
  double (*fn1)(double) = nullptr;
  double (*fn2)(double, double) = nullptr;
  std::shared_ptr<const Node> a, b;

  double eval(const double* x) const {
    switch (kind) {
      case Kind::Constant: return value;
      case Kind::Variable: return x[variable];
      case Kind::Negate: return -a->eval(x);
      case Kind::Add: return a->eval(x) + b->eval(x);
      case Kind::Sub: return a->eval(x) - b->eval(x);
      case Kind::Mul: return a->eval(x) * b->eval(x);
      case Kind::Div: return a->eval(x) / b->eval(x);
      case Kind::Pow: return std::pow(a->eval(x), b->eval(x));
      case Kind::Call1: return fn1(a->eval(x));
      case Kind::Call2: return fn2(a->eval(x), b->eval(x));
    }
    return 0.0;
  }
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;
using Kind = Expression::Node::Kind;

NodePtr make(Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Expression::Node>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

double sign_fn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }
double min_fn(double x, double y) { return std::min(x, y); }
double max_fn(double x, double y) { return std::max(x, y); }
double pow_fn(double x, double y) { return std::pow(x, y); }

class Parser {
 public:
  Parser(std::string_view s, const std::map<std::string, double>& params) : s_(s), params_(params) {}

  NodePtr parse() {
    auto n = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return n;
  }

  std::set<int> vars;

 private:
  std::string_view s_;
  const std::map<std::string, double>& params_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("expression \"" + std::string(s_) + "\": " + what + " at offset " + std::to_string(pos_));
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr expr() {
    auto n = term();
    for (;;) {
      if (accept('+')) n = make(Kind::Add, n, term());
      else if (accept('-')) n = make(Kind::Sub, n, term());
      else return n;
    }
  }

  NodePtr term() {
    auto n = unary();
    for (;;) {
      if (accept('*')) n = make(Kind::Mul, n, unary());
      else if (accept('/')) n = make(Kind::Div, n, unary());
      else return n;
    }
  }

  NodePtr unary() {
    if (accept('-')) return make(Kind::Negate, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    auto base = primary();
    if (accept('^')) return make(Kind::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    char c = s_[pos_];
    if (accept('(')) {
      auto n = expr();
      if (!accept(')')) fail("missing ')'");
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    fail("unexpected '" + std::string(1, c) + "'");
  }

  NodePtr number() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    auto n = std::make_shared<Expression::Node>();
    n->kind = Kind::Constant;
    try {
      n->value = std::stod(std::string(s_.substr(start, pos_ - start)));
    } catch (const std::exception&) {
      fail("bad number");
    }
    return n;
  }

  NodePtr identifier() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    std::string name(s_.substr(start, pos_ - start));
    skip();
    if (pos_ < s_.size() && s_[pos_] == '(') return call(name);

    static const std::map<std::string, int> coords = {{"t", 0}, {"x", 1}, {"y", 2}, {"z", 3}, {"x0", 0},
                                                      {"x1", 1}, {"x2", 2}, {"x3", 3}};
    auto n = std::make_shared<Expression::Node>();
    if (auto it = coords.find(name); it != coords.end()) {
      n->kind = Kind::Variable;
      n->variable = it->second;
      vars.insert(it->second);
      return n;
    }
    n->kind = Kind::Constant;
    if (auto it = params_.find(name); it != params_.end()) {
      n->value = it->second;
    } else if (name == "pi") {
      n->value = std::numbers::pi;
    } else {
      fail("unknown identifier '" + name + "'");
    }
    return n;
  }

  NodePtr call(const std::string& name) {
    accept('(');
    auto a = expr();
    static const std::map<std::string, double (*)(double)> unary_fns = {
        {"abs", [](double x) { return std::abs(x); }},   {"exp", [](double x) { return std::exp(x); }},
        {"log", [](double x) { return std::log(x); }},   {"sqrt", [](double x) { return std::sqrt(x); }},
        {"sin", [](double x) { return std::sin(x); }},   {"cos", [](double x) { return std::cos(x); }},
        {"tan", [](double x) { return std::tan(x); }},   {"sinh", [](double x) { return std::sinh(x); }},
        {"cosh", [](double x) { return std::cosh(x); }}, {"tanh", [](double x) { return std::tanh(x); }},
        {"sign", sign_fn}};
    static const std::map<std::string, double (*)(double, double)> binary_fns = {
        {"min", min_fn}, {"max", max_fn}, {"pow", pow_fn}};
    if (auto it = unary_fns.find(name); it != unary_fns.end()) {
      if (!accept(')')) fail("function '" + name + "' takes one argument");
      auto n = std::make_shared<Expression::Node>();
      n->kind = Kind::Call1;
      n->fn1 = it->second;
      n->a = a;
      return n;
    }
    if (auto it = binary_fns.find(name); it != binary_fns.end()) {
      if (!accept(',')) fail("function '" + name + "' takes two arguments");
      auto b = expr();
      if (!accept(')')) fail("missing ')'");
      auto n = std::make_shared<Expression::Node>();
      n->kind = Kind::Call2;
      n->fn2 = it->second;
      n->a = a;
      n->b = b;
      return n;
    }
    fail("unknown function '" + name + "'");
  }
};

}  // namespace

Expression Expression::parse(std::string_view text, const std::map<std::string, double>& params) {
  Parser p(text, params);
  Expression e;
  e.root_ = p.parse();
  e.variables_.assign(p.vars.begin(), p.vars.end());
  e.text_ = std::string(text);
  return e;
}

double Expression::eval(const double* coords) const { return root_->eval(coords); }

}  // namespace lowreg
