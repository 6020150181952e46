#pragma once

// Levenberg-Marquardt nonlinear least squares plus the fit models used by
// the analysis pipelines, with per-model initial-guess heuristics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinshelve/types.hpp"

namespace spinshelve {

enum class ModelKind {
  kExpDecay,       // y0 + A exp(-t/T)
  kExpRecovery,    // y0 - A exp(-t/T), A > 0: growth to plateau y0
  kDampedSin,      // A exp(-t/T2) sin(2 pi (t - t0)/T)
  kDoubleGaussian, // b + A1 exp(-(x-mu1)^2/2 s1^2) + A2 exp(-(x-mu2)^2/2 s2^2)
  kPowerLaw,       // t0 + b x^a, b > 0
  kLinear,         // c0 + c1 x
};

class FitModel {
 public:
  explicit FitModel(ModelKind kind) : kind_(kind) {}
  static FitModel from_name(const std::string& name);  // throws ParameterError
  static const std::vector<std::string>& known_names();

  ModelKind kind() const { return kind_; }
  const std::string& name() const;
  std::string formula() const;
  int n_params() const;
  const std::vector<std::string>& param_names() const;
  // true for parameters constrained positive (handled by log-transform).
  bool log_scaled(int param) const;

  // Pointwise evaluation with domain validation (T > 0, sigma > 0, ...).
  double eval(std::span<const double> params, double x) const;

 private:
  ModelKind kind_;
};

inline double model_eval(const FitModel& model, std::span<const double> params,
                         double x) {
  return model.eval(params, x);
}

struct FitResult {
  std::vector<double> params;
  std::vector<double> uncertainties;  // 1-sigma, from the scaled covariance
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

struct FitOptions {
  int max_iterations = 200;
  double lambda0 = 1e-3;         // initial LM damping
  double ftol = 1e-10;           // relative chi^2 change for convergence
  bool multistart = false;       // extra jittered starts (damped_sin)
  int n_starts = 8;
  std::uint64_t seed = 0;        // jitter seed for multistart
};

// Weighted Levenberg-Marquardt minimization of sum(((y - f(x))/sigma)^2).
// Constrained parameters run through a log transform internally. Returns a
// non-converged FitResult (never throws) when the normal equations stay
// singular through 5 consecutive damping escalations.
FitResult fit(const FitModel& model, std::span<const double> x,
              std::span<const double> y,
              std::span<const double> sigma = {},
              const std::optional<std::vector<double>>& init = std::nullopt,
              const FitOptions& options = {});

// Deterministic per-model starting values. Sets *degenerate when the data
// cannot support the model (e.g. constant y for an oscillatory model) and
// fallback defaults were used.
std::vector<double> initial_guess(const FitModel& model,
                                  std::span<const double> x,
                                  std::span<const double> y,
                                  bool* degenerate = nullptr);

namespace fit_detail {
// Transform helpers and the engine's Jacobian, exposed for verification.
std::vector<double> encode(const FitModel& model, std::span<const double> p);
std::vector<double> decode(const FitModel& model, std::span<const double> u);
// Central-difference Jacobian of the residual model in transformed space
// (relative step 1e-6, absolute floor 1e-12).
Eigen::MatrixXd jacobian(const FitModel& model, std::span<const double> u,
                         std::span<const double> x);
}  // namespace fit_detail

}  // namespace spinshelve
