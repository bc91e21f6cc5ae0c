#include <cctype>
#include <charconv>
#include <optional>
#include <stdexcept>
#include <string>

#include "pd/kernels.hpp"

namespace pd {
namespace {

/// Recursive-descent parser over the grammar
///   spec     := "stab[" spec ";" spec ";" number "]"
///             | "sum[" weighted (";" weighted)* "]"
///             | name (":" key "=" number ("," key "=" number)*)?
///   weighted := (number "*")? spec
class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  KernelSpec parse() {
    KernelSpec k = spec();
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after kernel spec");
    return k;
  }

 private:
  const std::string& text_;
  size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw std::invalid_argument("kernel spec error at position " + std::to_string(pos_) +
                                ": " + why + " (input: \"" + text_ + "\")");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!consume(c)) fail(std::string("expected '") + c + "'");
  }

  std::string ident() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    if (pos_ == start) fail("expected a name");
    return text_.substr(start, pos_ - start);
  }

  double number() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
          c == 'e' || c == 'E')
        ++pos_;
      else
        break;
    }
    if (pos_ == start) fail("expected a number");
    const std::string tok = text_.substr(start, pos_ - start);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
      pos_ = start;
      fail("malformed number \"" + tok + "\"");
    }
    return v;
  }

  /// True when the upcoming token is "number *" (a sum member weight).
  bool peek_weight() const {
    size_t p = pos_;
    while (p < text_.size() && std::isspace(static_cast<unsigned char>(text_[p]))) ++p;
    bool any = false;
    while (p < text_.size()) {
      char c = text_[p];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
          c == 'e' || c == 'E') {
        any = true;
        ++p;
      } else {
        break;
      }
    }
    while (p < text_.size() && std::isspace(static_cast<unsigned char>(text_[p]))) ++p;
    return any && p < text_.size() && text_[p] == '*';
  }

  KernelSpec spec() {
    skip_ws();
    const std::string name = ident();
    if (name == "sum") {
      expect('[');
      std::vector<std::pair<double, KernelSpec>> members;
      do {
        double w = 1.0;
        if (peek_weight()) {
          w = number();
          expect('*');
        }
        members.emplace_back(w, spec());
      } while (consume(';'));
      expect(']');
      try {
        return KernelSpec::sum(std::move(members));
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
    if (name == "stab") {
      expect('[');
      KernelSpec base = spec();
      expect(';');
      KernelSpec s = spec();
      expect(';');
      double eps = number();
      expect(']');
      try {
        return KernelSpec::stabilized(std::move(base), std::move(s), eps);
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
    return simple(name);
  }

  KernelSpec simple(const std::string& name) {
    std::optional<double> sigma, alpha, m;
    if (consume(':')) {
      do {
        const std::string key = ident();
        expect('=');
        const double v = number();
        if (key == "sigma")
          sigma = v;
        else if (key == "alpha")
          alpha = v;
        else if (key == "m")
          m = v;
        else
          fail("unknown parameter \"" + key + "\"");
      } while (consume(','));
    }
    const auto only = [&](bool sigma_ok, bool alpha_ok, bool m_ok) {
      if (sigma && !sigma_ok) fail("\"" + name + "\" takes no sigma parameter");
      if (alpha && !alpha_ok) fail("\"" + name + "\" takes no alpha parameter");
      if (m && !m_ok) fail("\"" + name + "\" takes no m parameter");
    };
    try {
      if (name == "gaussian") {
        only(true, false, false);
        return KernelSpec::gaussian(sigma.value_or(1.0));
      }
      if (name == "rgaussian") {
        only(true, false, false);
        return KernelSpec::rescaled_gaussian(sigma.value_or(1.0));
      }
      if (name == "rq") {
        only(false, true, false);
        return KernelSpec::rational_quadratic(alpha.value_or(1.0));
      }
      if (name == "rrq") {
        only(false, true, false);
        return KernelSpec::rescaled_rq(alpha.value_or(1.0));
      }
      if (name == "cramer") {
        only(false, false, false);
        return KernelSpec::cramer();
      }
      if (name == "elastic") {
        only(false, false, true);
        return m ? KernelSpec::elastic(*m) : KernelSpec::elastic();
      }
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    fail("unknown kernel \"" + name + "\"");
  }
};

}  // namespace

KernelSpec parse_kernel(const std::string& text) { return Parser(text).parse(); }

}  // namespace pd
