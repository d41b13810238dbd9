#include "pmpc/control_signal.hpp"

#include <algorithm>
#include <cmath>

#include "pmpc/rng.hpp"

namespace pmpc {

ControlSignal::ControlSignal(VectorXd times, MatrixXd values, Interpolation interp)
    : times_(std::move(times)), values_(std::move(values)), interp_(interp) {
  if (times_.size() == 0 || values_.cols() != times_.size())
    throw UsageError("ControlSignal: need one value column per knot time");
  for (int i = 0; i + 1 < times_.size(); ++i)
    if (!(times_[i + 1] > times_[i]))
      throw UsageError("ControlSignal: knot times must be strictly increasing");
  if (!values_.allFinite()) throw UsageError("ControlSignal: non-finite knot values");

  if (interp_ == Interpolation::cubic && knots() >= 3) {
    second_derivs_.resize(values_.rows(), values_.cols());
    for (int d = 0; d < values_.rows(); ++d)
      second_derivs_.row(d) = natural_spline_second_derivs(times_, values_.row(d).transpose()).transpose();
  } else {
    second_derivs_ = MatrixXd::Zero(values_.rows(), values_.cols());
  }
}

ControlSignal ControlSignal::constant(const VectorXd& u, double t0, double t1) {
  MatrixXd vals(u.size(), 2);
  vals.col(0) = u;
  vals.col(1) = u;
  return ControlSignal((VectorXd(2) << t0, t1).finished(), vals);
}

int ControlSignal::interval(double t) const {
  // index i with times_[i] <= t < times_[i+1], clamped to valid segments
  const int n = knots();
  if (t <= times_[0]) return 0;
  if (t >= times_[n - 1]) return n - 2;
  int lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    if (times_[mid] <= t)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

void ControlSignal::eval_into(double t, Eigen::Ref<VectorXd> out) const {
  if (empty()) throw UsageError("ControlSignal: evaluating empty signal");
  if (knots() == 1) {
    out = values_.col(0);
    return;
  }
  t = std::clamp(t, times_[0], times_[times_.size() - 1]);
  const int i = interval(t);
  if (interp_ == Interpolation::zero_order_hold) {
    out = (t >= times_[i + 1]) ? values_.col(i + 1) : values_.col(i);
    return;
  }
  const double h = times_[i + 1] - times_[i];
  const double a = (times_[i + 1] - t) / h;
  const double b = 1.0 - a;
  out = a * values_.col(i) + b * values_.col(i + 1) +
        ((a * a * a - a) * second_derivs_.col(i) + (b * b * b - b) * second_derivs_.col(i + 1)) *
            (h * h / 6.0);
}

VectorXd ControlSignal::eval(double t) const {
  VectorXd out(dim());
  eval_into(t, out);
  return out;
}

VectorXd ControlSignal::deriv(double t) const {
  if (empty()) throw UsageError("ControlSignal: evaluating empty signal");
  if (knots() == 1 || interp_ == Interpolation::zero_order_hold)
    return VectorXd::Zero(dim());
  t = std::clamp(t, times_[0], times_[times_.size() - 1]);
  const int i = interval(t);
  const double h = times_[i + 1] - times_[i];
  const double a = (times_[i + 1] - t) / h;
  const double b = 1.0 - a;
  return (values_.col(i + 1) - values_.col(i)) / h -
         (3.0 * a * a - 1.0) * h / 6.0 * second_derivs_.col(i) +
         (3.0 * b * b - 1.0) * h / 6.0 * second_derivs_.col(i + 1);
}

VectorXd natural_spline_second_derivs(const VectorXd& times, const VectorXd& values) {
  const int n = int(times.size());
  VectorXd m = VectorXd::Zero(n);
  if (n < 3) return m;
  // Thomas algorithm on the interior tridiagonal system; natural ends m=0.
  VectorXd diag(n - 2), rhs(n - 2), upper(n - 2);
  for (int i = 1; i <= n - 2; ++i) {
    const double h0 = times[i] - times[i - 1];
    const double h1 = times[i + 1] - times[i];
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
  }
  for (int i = 1; i < n - 2; ++i) {
    const double h0 = times[i + 1] - times[i];  // sub-diagonal entry for row i
    const double w = h0 / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (int i = n - 3; i >= 0; --i) {
    const double next = (i + 1 <= n - 3) ? m[i + 2] : 0.0;
    m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
  }
  return m;
}

MatrixXd spline_basis_matrix(const VectorXd& knot_times, const VectorXd& eval_times) {
  const int k = int(knot_times.size());
  MatrixXd basis(eval_times.size(), k);
  VectorXd unit = VectorXd::Zero(k);
  VectorXd out(1);
  for (int j = 0; j < k; ++j) {
    unit[j] = 1.0;
    ControlSignal phi(knot_times, unit.transpose());
    for (int i = 0; i < eval_times.size(); ++i) {
      phi.eval_into(eval_times[i], out);
      basis(i, j) = out[0];
    }
    unit[j] = 0.0;
  }
  return basis;
}

ControlSignal schroeder_sweep(double amplitude, int n_harmonics, double period,
                              std::uint64_t seed, const SchroederOptions& opts) {
  if (n_harmonics < 1 || period <= 0.0)
    throw UsageError("schroeder_sweep: need n_harmonics >= 1 and period > 0");
  const double duration = opts.duration > 0.0 ? opts.duration : period;
  const double knot_dt = opts.knot_dt > 0.0 ? opts.knot_dt : period / (64.0 * n_harmonics);
  const int dim = opts.dim;

  Rng rng(seed);
  const int n_knots = std::max(2, int(std::llround(duration / knot_dt)) + 1);
  VectorXd times = VectorXd::LinSpaced(n_knots, 0.0, duration);
  MatrixXd values(dim, n_knots);

  const int k_harm = n_harmonics;
  VectorXd phase(k_harm), amp(k_harm);
  for (int d = 0; d < dim; ++d) {
    const double shift = rng.uniform(0.0, period);
    for (int k = 1; k <= k_harm; ++k) {
      phase[k - 1] = -M_PI * double(k) * double(k - 1) / double(k_harm) +
                     2.0 * M_PI * double(k) * shift / period;
      amp[k - 1] = rng.uniform(0.5, 1.5);
    }
    auto raw = [&](double t) {
      double s = 0.0;
      for (int k = 1; k <= k_harm; ++k)
        s += amp[k - 1] * std::cos(2.0 * M_PI * double(k) * t / period + phase[k - 1]);
      return s;
    };
    // normalize by the true waveform peak: dense scan over one period, then
    // ternary refinement around every local maximum of |raw|
    const int n_dense = 4096;
    std::vector<double> mag(n_dense);
    for (int i = 0; i < n_dense; ++i) mag[size_t(i)] = std::abs(raw(period * i / double(n_dense)));
    double peak = 0.0;
    for (int i = 0; i < n_dense; ++i) {
      const double prev = mag[size_t((i + n_dense - 1) % n_dense)];
      const double next = mag[size_t((i + 1) % n_dense)];
      if (mag[size_t(i)] < prev || mag[size_t(i)] < next) continue;
      double lo = period * (i - 1) / double(n_dense);
      double hi = period * (i + 1) / double(n_dense);
      for (int it = 0; it < 80; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        if (std::abs(raw(m1)) < std::abs(raw(m2)))
          lo = m1;
        else
          hi = m2;
      }
      peak = std::max(peak, std::abs(raw(0.5 * (lo + hi))));
    }
    const double scale = amplitude / peak;
    for (int i = 0; i < n_knots; ++i) values(d, i) = scale * raw(times[i]);
  }
  return ControlSignal(std::move(times), std::move(values));
}

}  // namespace pmpc
