#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace lowreg {

/// Scalar expression in chart coordinates, e.g. "1 + a*x*abs(x)".
///
/// Variables: x0..x3, with aliases t=x0, x=x1, y=x2, z=x3. Named parameters
/// are substituted at parse time. Supports + - * / ^, unary minus and
/// abs exp log sqrt sin cos tan sinh cosh tanh sign min max pow.
class Expression {
 public:
  static Expression parse(std::string_view text, const std::map<std::string, double>& params = {});

  double eval(const double* coords) const;
  /// Coordinate indices the expression references.
  const std::vector<int>& variables() const { return variables_; }
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::vector<int> variables_;
  std::string text_;
};

}  // namespace lowreg
