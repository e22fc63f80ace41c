#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "varcomp/core.hpp"

namespace varcomp::opt {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Options {
  int nm_max_evals = 2000;   // derivative-free stage budget
  int max_evals = 10000;     // total budget including the polish
  double rel_tol = 1e-9;     // relative objective change considered a stall
  int stall_iters = 5;       // consecutive stalled iterations to declare convergence
  double fd_step = 1e-5;     // relative step for polish gradients
};

struct Result {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int n_evals = 0;
  bool converged = false;
};

namespace detail {

class CountedObjective {
 public:
  CountedObjective(const Objective& f, int budget) : f_(f), budget_(budget) {}
  double operator()(const Eigen::VectorXd& x) {
    if (count_ >= budget_) {
      exhausted_ = true;
      return std::numeric_limits<double>::infinity();
    }
    ++count_;
    const double v = f_(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  }
  int count() const { return count_; }
  bool exhausted() const { return exhausted_; }

 private:
  const Objective& f_;
  int budget_;
  int count_ = 0;
  bool exhausted_ = false;
};

// Nelder-Mead with the adaptive coefficients of Gao & Han for dimension n.
inline Result nelder_mead(CountedObjective& f, const Eigen::VectorXd& x0, int max_evals,
                          double rel_tol, int stall_iters) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0;
  const double beta = 1.0 + 2.0 / n;
  const double gamma = 0.75 - 0.5 / n;
  const double delta = 1.0 - 1.0 / n;

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(n) + 1, x0);
  Eigen::VectorXd fs(n + 1);
  for (int i = 1; i <= n; ++i) xs[static_cast<std::size_t>(i)][i - 1] += 0.10 * std::abs(x0[i - 1]) + 0.05;
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[static_cast<std::size_t>(i)]);

  std::vector<int> order(static_cast<std::size_t>(n) + 1);
  int stalled = 0;
  const int start_evals = f.count();
  while (f.count() - start_evals < max_evals) {
    for (int i = 0; i <= n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order.front(), worst = order.back(), second_worst = order[order.size() - 2];

    const double spread = std::abs(fs[worst] - fs[best]);
    if (spread <= rel_tol * (1.0 + std::abs(fs[best]))) {
      if (++stalled >= stall_iters) break;
    } else {
      stalled = 0;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[static_cast<std::size_t>(i)];
    centroid /= n;

    const Eigen::VectorXd xr = centroid + alpha * (centroid - xs[static_cast<std::size_t>(worst)]);
    const double fr = f(xr);
    if (fr < fs[best]) {
      const Eigen::VectorXd xe = centroid + beta * (xr - centroid);
      const double fe = f(xe);
      if (fe < fr) {
        xs[static_cast<std::size_t>(worst)] = xe;
        fs[worst] = fe;
      } else {
        xs[static_cast<std::size_t>(worst)] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second_worst]) {
      xs[static_cast<std::size_t>(worst)] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      Eigen::VectorXd xc;
      if (outside)
        xc = centroid + gamma * (xr - centroid);
      else
        xc = centroid - gamma * (centroid - xs[static_cast<std::size_t>(worst)]);
      const double fc = f(xc);
      if (fc < std::min(fr, fs[worst])) {
        xs[static_cast<std::size_t>(worst)] = xc;
        fs[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          xs[static_cast<std::size_t>(i)] =
              xs[static_cast<std::size_t>(best)] +
              delta * (xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(best)]);
          fs[i] = f(xs[static_cast<std::size_t>(i)]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  Result res;
  res.x = xs[static_cast<std::size_t>(best)];
  res.f = fs[best];
  res.converged = stalled >= stall_iters;
  return res;
}

inline Eigen::VectorXd central_gradient(CountedObjective& f, const Eigen::VectorXd& x,
                                        double rel_step) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n), xp = x;
  for (int i = 0; i < n; ++i) {
    const double h = rel_step * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Quasi-Newton (BFGS) polish with numerical gradients and Armijo backtracking.
inline Result bfgs_polish(CountedObjective& f, const Eigen::VectorXd& x0, double f0,
                          const Options& options) {
  const int n = static_cast<int>(x0.size());
  Eigen::VectorXd x = x0;
  double fx = f0;
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = central_gradient(f, x, options.fd_step);
  int stalled = 0;
  bool converged = false;

  for (int iter = 0; iter < 200 && !f.exhausted(); ++iter) {
    Eigen::VectorXd direction = -(h_inv * g);
    double slope = g.dot(direction);
    if (slope >= 0.0) {  // reset on loss of descent
      h_inv.setIdentity();
      direction = -g;
      slope = g.dot(direction);
      if (slope >= 0.0) {
        converged = true;
        break;
      }
    }
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + step * direction;
      f_new = f(x_new);
      if (f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      converged = true;  // no progress along a descent direction: at resolution limit
      break;
    }
    Eigen::VectorXd g_new = central_gradient(f, x_new, options.fd_step);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h_inv * yv;
      const double yhy = yv.dot(hy);
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose());
      h_inv -= (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    const double improvement = fx - f_new;
    x = x_new;
    fx = f_new;
    g = g_new;
    if (improvement <= options.rel_tol * (1.0 + std::abs(fx))) {
      if (++stalled >= options.stall_iters) {
        converged = true;
        break;
      }
    } else {
      stalled = 0;
    }
  }

  Result res;
  res.x = x;
  res.f = fx;
  res.converged = converged;
  return res;
}

}  // namespace detail

// Derivative-free stage followed by a quasi-Newton polish.
inline Result minimize(const Objective& objective, const Eigen::VectorXd& x0,
                       const Options& options = {}) {
  detail::CountedObjective f(objective, options.max_evals);
  Result nm = detail::nelder_mead(f, x0, options.nm_max_evals, options.rel_tol,
                                  options.stall_iters);
  Result out = nm;
  if (!f.exhausted()) {
    Result polish = detail::bfgs_polish(f, nm.x, nm.f, options);
    if (polish.f <= nm.f) {
      out = polish;
    } else {
      out.converged = nm.converged;
    }
  } else {
    out.converged = false;
  }
  if (!std::isfinite(out.f)) out.converged = false;
  out.n_evals = f.count();
  return out;
}

}  // namespace varcomp::opt
