#include "spinshelve/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace spinshelve {

namespace {

struct ModelInfo {
  std::string name;
  std::string formula;
  std::vector<std::string> params;
  std::vector<bool> log_scaled;
};

const ModelInfo& info(ModelKind kind) {
  static const ModelInfo tables[] = {
      {"exp_decay", "y0 + A*exp(-t/T)", {"y0", "A", "T"}, {false, false, true}},
      {"exp_recovery",
       "y0 - A*exp(-tau/T)",
       {"y0", "A", "T"},
       {false, true, true}},
      {"damped_sin",
       "A*exp(-tau/T2rho)*sin(2*pi*(tau-tau0)/T)",
       {"A", "T2rho", "T", "tau0"},
       {false, true, true, false}},
      {"double_gaussian",
       "b + A1*exp(-(x-mu1)^2/(2*s1^2)) + A2*exp(-(x-mu2)^2/(2*s2^2))",
       {"b", "A1", "mu1", "s1", "A2", "mu2", "s2"},
       {false, false, false, true, false, false, true}},
      {"power_law", "t0 + b*x^a", {"t0", "b", "a"}, {false, true, false}},
      {"linear", "c0 + c1*x", {"c0", "c1"}, {false, false}},
  };
  return tables[static_cast<int>(kind)];
}

}  // namespace

FitModel FitModel::from_name(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(ModelKind::kLinear); ++k) {
    if (info(static_cast<ModelKind>(k)).name == name) {
      return FitModel(static_cast<ModelKind>(k));
    }
  }
  std::ostringstream os;
  os << "unknown fit model '" << name << "'; known models:";
  for (const auto& n : known_names()) os << " " << n;
  throw ParameterError(os.str());
}

const std::vector<std::string>& FitModel::known_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (int k = 0; k <= static_cast<int>(ModelKind::kLinear); ++k) {
      v.push_back(info(static_cast<ModelKind>(k)).name);
    }
    return v;
  }();
  return names;
}

const std::string& FitModel::name() const { return info(kind_).name; }
std::string FitModel::formula() const { return info(kind_).formula; }
int FitModel::n_params() const {
  return static_cast<int>(info(kind_).params.size());
}
const std::vector<std::string>& FitModel::param_names() const {
  return info(kind_).params;
}
bool FitModel::log_scaled(int param) const {
  return info(kind_).log_scaled[static_cast<std::size_t>(param)];
}

double FitModel::eval(std::span<const double> p, double x) const {
  if (static_cast<int>(p.size()) != n_params()) {
    throw ParameterError("wrong parameter count for model " + name());
  }
  for (int i = 0; i < n_params(); ++i) {
    if (log_scaled(i) && !(p[static_cast<std::size_t>(i)] > 0.0)) {
      throw ParameterError("parameter " + param_names()[static_cast<std::size_t>(i)] +
                           " of model " + name() + " must be > 0");
    }
  }
  switch (kind_) {
    case ModelKind::kExpDecay:
      return p[0] + p[1] * std::exp(-x / p[2]);
    case ModelKind::kExpRecovery:
      return p[0] - p[1] * std::exp(-x / p[2]);
    case ModelKind::kDampedSin:
      return p[0] * std::exp(-x / p[1]) *
             std::sin(2.0 * M_PI * (x - p[3]) / p[2]);
    case ModelKind::kDoubleGaussian: {
      const double d1 = (x - p[2]) / p[3];
      const double d2 = (x - p[5]) / p[6];
      return p[0] + p[1] * std::exp(-0.5 * d1 * d1) +
             p[4] * std::exp(-0.5 * d2 * d2);
    }
    case ModelKind::kPowerLaw:
      return p[0] + p[1] * std::pow(x, p[2]);
    case ModelKind::kLinear:
      return p[0] + p[1] * x;
  }
  throw ParameterError("unhandled model kind");
}

namespace fit_detail {

std::vector<double> encode(const FitModel& model, std::span<const double> p) {
  std::vector<double> u(p.begin(), p.end());
  for (int i = 0; i < model.n_params(); ++i) {
    if (model.log_scaled(i)) {
      if (!(p[static_cast<std::size_t>(i)] > 0.0)) {
        throw ParameterError("initial value for log-scaled parameter " +
                             model.param_names()[static_cast<std::size_t>(i)] +
                             " must be > 0");
      }
      u[static_cast<std::size_t>(i)] = std::log(p[static_cast<std::size_t>(i)]);
    }
  }
  return u;
}

std::vector<double> decode(const FitModel& model, std::span<const double> u) {
  std::vector<double> p(u.begin(), u.end());
  for (int i = 0; i < model.n_params(); ++i) {
    if (model.log_scaled(i)) {
      // clamp so a wild trial step cannot underflow exp() to an exact zero
      const double c =
          std::clamp(u[static_cast<std::size_t>(i)], -690.0, 690.0);
      p[static_cast<std::size_t>(i)] = std::exp(c);
    }
  }
  return p;
}

Eigen::MatrixXd jacobian(const FitModel& model, std::span<const double> u,
                         std::span<const double> x) {
  const int np = model.n_params();
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd j(n, np);
  std::vector<double> up(u.begin(), u.end());
  for (int c = 0; c < np; ++c) {
    const double u0 = up[static_cast<std::size_t>(c)];
    const double h = std::max(1e-6 * std::abs(u0), 1e-12);
    up[static_cast<std::size_t>(c)] = u0 + h;
    const std::vector<double> hi = decode(model, up);
    up[static_cast<std::size_t>(c)] = u0 - h;
    const std::vector<double> lo = decode(model, up);
    up[static_cast<std::size_t>(c)] = u0;
    for (Eigen::Index i = 0; i < n; ++i) {
      j(i, c) = (model.eval(hi, x[static_cast<std::size_t>(i)]) -
                 model.eval(lo, x[static_cast<std::size_t>(i)])) /
                (2.0 * h);
    }
  }
  return j;
}

}  // namespace fit_detail

namespace {

double chi_squared(const FitModel& model, std::span<const double> p,
                   std::span<const double> x, std::span<const double> y,
                   std::span<const double> w) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = (y[i] - model.eval(p, x[i])) * w[i];
    sum += r * r;
  }
  return sum;
}

FitResult lm_minimize(const FitModel& model, std::span<const double> x,
                      std::span<const double> y, std::span<const double> w,
                      std::vector<double> u, const FitOptions& options) {
  const int np = model.n_params();
  const auto n = static_cast<Eigen::Index>(x.size());

  FitResult result;
  double lambda = options.lambda0;
  std::vector<double> p = fit_detail::decode(model, u);
  double chi2 = chi_squared(model, p, x, y, w);
  int consecutive_singular = 0;
  bool converged = false;
  std::string message;

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    Eigen::MatrixXd jf = fit_detail::jacobian(model, u, x);
    // Residual Jacobian includes the weights; r_i = w_i (y_i - f_i).
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      jf.row(i) *= w[static_cast<std::size_t>(i)];
      r[i] = w[static_cast<std::size_t>(i)] *
             (y[static_cast<std::size_t>(i)] -
              model.eval(p, x[static_cast<std::size_t>(i)]));
    }
    const Eigen::MatrixXd h = jf.transpose() * jf;
    const Eigen::VectorXd g = jf.transpose() * r;

    bool accepted = false;
    while (true) {
      Eigen::MatrixXd damped = h;
      for (int d = 0; d < np; ++d) {
        damped(d, d) += lambda * std::max(h(d, d), 1e-300);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(g);
      if (!step.allFinite()) {
        ++consecutive_singular;
        if (consecutive_singular >= 5) {
          result.params = p;
          result.uncertainties.assign(static_cast<std::size_t>(np), 0.0);
          result.chi2 = chi2;
          result.reduced_chi2 =
              chi2 / std::max<double>(1.0, static_cast<double>(n - np));
          result.iterations = iter;
          result.converged = false;
          result.message =
              "singular normal equations after 5 consecutive damping "
              "escalations";
          return result;
        }
        lambda *= 10.0;
        continue;
      }
      consecutive_singular = 0;

      std::vector<double> u_try(u);
      for (int d = 0; d < np; ++d) u_try[static_cast<std::size_t>(d)] += step[d];
      std::vector<double> p_try = fit_detail::decode(model, u_try);
      const double chi2_try = chi_squared(model, p_try, x, y, w);
      if (std::isfinite(chi2_try) && chi2_try <= chi2) {
        // Accepted steps never increase chi^2.
        const double drop = chi2 - chi2_try;
        u = std::move(u_try);
        p = std::move(p_try);
        const double chi2_old = chi2;
        chi2 = chi2_try;
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (drop <= options.ftol * std::max(chi2_old, 1e-300)) {
          converged = true;
          message = "relative chi^2 change below ftol";
        }
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e15) break;
    }
    if (converged) {
      ++iter;
      break;
    }
    if (!accepted) {
      // Damping blew up without an acceptable step: the current point is a
      // numerical local minimum.
      converged = true;
      message = "no further improvement at damping limit";
      ++iter;
      break;
    }
  }
  if (!converged) message = "iteration limit reached";

  result.params = p;
  result.chi2 = chi2;
  const double dof = std::max<double>(1.0, static_cast<double>(n - np));
  result.reduced_chi2 = chi2 / dof;
  result.iterations = iter;
  result.converged = converged;
  result.message = message;

  // Covariance of the transformed parameters, scaled by the reduced chi^2;
  // mapped back through d(theta)/du = theta for log-scaled entries.
  Eigen::MatrixXd jf = fit_detail::jacobian(model, u, x);
  for (Eigen::Index i = 0; i < n; ++i) {
    jf.row(i) *= w[static_cast<std::size_t>(i)];
  }
  const Eigen::MatrixXd h = jf.transpose() * jf;
  const Eigen::MatrixXd cov =
      h.completeOrthogonalDecomposition().pseudoInverse() * result.reduced_chi2;
  result.uncertainties.assign(static_cast<std::size_t>(np), 0.0);
  for (int d = 0; d < np; ++d) {
    const double var = std::max(cov(d, d), 0.0);
    double sigma_u = std::sqrt(var);
    if (model.log_scaled(d)) sigma_u *= p[static_cast<std::size_t>(d)];
    result.uncertainties[static_cast<std::size_t>(d)] = sigma_u;
  }
  return result;
}

}  // namespace

FitResult fit(const FitModel& model, std::span<const double> x,
              std::span<const double> y, std::span<const double> sigma,
              const std::optional<std::vector<double>>& init,
              const FitOptions& options) {
  if (x.size() != y.size()) {
    throw ParameterError("x and y must have the same length");
  }
  if (static_cast<int>(x.size()) < model.n_params()) {
    std::ostringstream os;
    os << "insufficient points: model " << model.name() << " needs at least "
       << model.n_params() << ", got " << x.size();
    throw ParameterError(os.str());
  }
  std::vector<double> w(x.size(), 1.0);
  if (!sigma.empty()) {
    if (sigma.size() != x.size()) {
      throw ParameterError("sigma must match the data length");
    }
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      if (!(sigma[i] > 0.0)) throw ParameterError("sigma values must be > 0");
      w[i] = 1.0 / sigma[i];
    }
  }

  std::vector<double> start = init ? *init : initial_guess(model, x, y);
  if (static_cast<int>(start.size()) != model.n_params()) {
    throw ParameterError("initial guess has wrong parameter count");
  }

  std::vector<std::vector<double>> starts{fit_detail::encode(model, start)};
  if (options.multistart && model.kind() == ModelKind::kDampedSin) {
    // The frequency landscape is multimodal; jitter the period and phase.
    std::mt19937_64 rng(options.seed ^ 0x6d6f64656c666974ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int s = 1; s < options.n_starts; ++s) {
      std::vector<double> alt = start;
      alt[2] = start[2] * std::exp((uni(rng) - 0.5) * 2.0 * std::log(2.5));
      alt[3] = start[3] + uni(rng) * alt[2];
      starts.push_back(fit_detail::encode(model, alt));
    }
  }

  FitResult best;
  bool have_best = false;
  for (const auto& u0 : starts) {
    FitResult r = lm_minimize(model, x, y, w, u0, options);
    const bool better =
        !have_best || (r.converged && !best.converged) ||
        (r.converged == best.converged && r.chi2 < best.chi2);
    if (better) {
      best = std::move(r);
      have_best = true;
    }
  }
  return best;
}

namespace {

double tail_mean(std::span<const double> y) {
  const std::size_t n = y.size();
  const std::size_t k = std::max<std::size_t>(3, n / 10);
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = n - std::min(k, n); i < n; ++i) {
    s += y[i];
    ++count;
  }
  return s / static_cast<double>(count);
}

double data_scale(std::span<const double> y) {
  const auto [mn, mx] = std::minmax_element(y.begin(), y.end());
  return *mx - *mn;
}

}  // namespace

std::vector<double> initial_guess(const FitModel& model,
                                  std::span<const double> x,
                                  std::span<const double> y,
                                  bool* degenerate) {
  if (x.empty() || x.size() != y.size()) {
    throw ParameterError("initial_guess requires matched nonempty data");
  }
  bool flagged = false;
  const double span = x.back() - x.front();
  const double range = data_scale(y);
  std::vector<double> g;

  switch (model.kind()) {
    case ModelKind::kExpDecay:
    case ModelKind::kExpRecovery: {
      const double y0 = tail_mean(y);
      double a0 = y.front() - y0;  // signed for exp_decay
      double t0 = span > 0.0 ? span / 3.0 : 1.0;
      if (std::abs(a0) <= 1e-12 * std::max(std::abs(y0), 1.0)) {
        flagged = true;  // constant data: nothing decays
        a0 = 0.0;
      } else {
        const double target = std::abs(a0) / M_E;
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (std::abs(y[i] - y0) <= target) {
            t0 = std::max(x[i] - x.front(), span * 1e-3);
            break;
          }
        }
      }
      if (model.kind() == ModelKind::kExpRecovery) {
        // A is constrained positive (growth toward the plateau).
        double a_rec = y0 - y.front();
        if (a_rec <= 0.0) {
          flagged = true;
          a_rec = std::max(range, 1e-12) * 1e-3 + 1e-300;
        }
        g = {y0, a_rec, t0};
      } else {
        g = {y0, a0, t0};
      }
      break;
    }
    case ModelKind::kDampedSin: {
      const double mean =
          std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
      double best_power = -1.0;
      double best_freq = 1.0 / std::max(span, 1e-12);
      std::complex<double> best_z;
      const std::size_t n_freq = std::max<std::size_t>(2, x.size() / 2);
      for (std::size_t j = 1; j <= n_freq; ++j) {
        const double f = static_cast<double>(j) / std::max(span, 1e-12);
        std::complex<double> z(0.0, 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double ph = -2.0 * M_PI * f * x[i];
          z += (y[i] - mean) * std::complex<double>(std::cos(ph), std::sin(ph));
        }
        if (std::norm(z) > best_power) {
          best_power = std::norm(z);
          best_freq = f;
          best_z = z;
        }
      }
      double period = 1.0 / best_freq;
      double amp = range / 2.0;
      if (amp <= 0.0) {
        flagged = true;
        amp = 1e-300;
        period = span > 0.0 ? span / 2.0 : 1.0;
      }
      // arg(z) = -(phase + pi/2) for y = A sin(omega t - phase).
      const double phase = -std::arg(best_z) - M_PI / 2.0;
      double tau0 = phase / (2.0 * M_PI) * period;
      tau0 -= std::floor(tau0 / period) * period;
      g = {amp, std::max(span / 2.0, 1e-12), period, tau0};
      break;
    }
    case ModelKind::kDoubleGaussian: {
      const double b = *std::min_element(y.begin(), y.end());
      // Two highest separation-constrained local maxima.
      std::vector<std::size_t> peaks;
      for (std::size_t i = 1; i + 1 < y.size(); ++i) {
        if (y[i] >= y[i - 1] && y[i] > y[i + 1]) peaks.push_back(i);
      }
      std::sort(peaks.begin(), peaks.end(),
                [&](std::size_t a, std::size_t c) { return y[a] > y[c]; });
      const double min_sep = std::abs(span) / 10.0;
      std::size_t i1 = peaks.empty()
                           ? static_cast<std::size_t>(
                                 std::max_element(y.begin(), y.end()) - y.begin())
                           : peaks[0];
      std::size_t i2 = i1;
      for (std::size_t k = 1; k < peaks.size(); ++k) {
        if (std::abs(x[peaks[k]] - x[i1]) >= min_sep) {
          i2 = peaks[k];
          break;
        }
      }
      if (i2 == i1) {
        flagged = true;  // only one resolvable peak
        i2 = (x[i1] < x.front() + span / 2.0)
                 ? std::min(x.size() - 1, i1 + std::max<std::size_t>(1, x.size() / 4))
                 : (i1 >= std::max<std::size_t>(1, x.size() / 4)
                        ? i1 - std::max<std::size_t>(1, x.size() / 4)
                        : 0);
      }
      auto width_guess = [&](std::size_t peak) {
        const double half = b + (y[peak] - b) / 2.0;
        double w = std::abs(span) / 20.0;
        for (std::size_t d = 1; d < x.size(); ++d) {
          const bool lo_ok = peak >= d && y[peak - d] <= half;
          const bool hi_ok = peak + d < y.size() && y[peak + d] <= half;
          if (lo_ok || hi_ok) {
            const std::size_t idx = lo_ok ? peak - d : peak + d;
            w = std::abs(x[idx] - x[peak]) / 1.1774;  // HWHM -> sigma
            break;
          }
        }
        return std::max(w, std::abs(span) * 1e-3 + 1e-12);
      };
      double mu1 = x[i1], mu2 = x[i2];
      double a1 = std::max(y[i1] - b, 1e-300);
      double a2 = std::max(y[i2] - b, 1e-300);
      double s1 = width_guess(i1), s2 = width_guess(i2);
      if (mu2 < mu1) {
        std::swap(mu1, mu2);
        std::swap(a1, a2);
        std::swap(s1, s2);
      }
      g = {b, a1, mu1, s1, a2, mu2, s2};
      break;
    }
    case ModelKind::kPowerLaw: {
      const double y_min = *std::min_element(y.begin(), y.end());
      const double eps = 1e-9 * std::max(range, 1.0) + 1e-300;
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      int n = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) continue;
        const double ly = std::log(y[i] - y_min + eps);
        const double lx = std::log(x[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
      }
      double a = -1.0, logb = 0.0;
      if (n >= 2 && range > 0.0) {
        const double denom = n * sxx - sx * sx;
        if (std::abs(denom) > 1e-30) {
          a = (n * sxy - sx * sy) / denom;
          logb = (sy - a * sx) / n;
        }
      } else {
        flagged = true;
      }
      g = {y_min, std::exp(logb), a};
      break;
    }
    case ModelKind::kLinear: {
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      const auto n = static_cast<double>(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
      }
      const double denom = n * sxx - sx * sx;
      const double c1 = std::abs(denom) > 1e-30 ? (n * sxy - sx * sy) / denom : 0.0;
      g = {(sy - c1 * sx) / n, c1};
      break;
    }
  }
  if (degenerate) *degenerate = flagged;
  return g;
}

}  // namespace spinshelve
