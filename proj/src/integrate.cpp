#include "pmpc/integrate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace pmpc {

void IntegratorConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw UsageError("IntegratorConfig: tolerances must be positive");
  if (!(h_init > 0.0) || !(h_init <= h_max)) throw UsageError("IntegratorConfig: need 0 < h_init <= h_max");
  if (max_steps <= 0) throw UsageError("IntegratorConfig: max_steps must be positive");
}

void Trajectory::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw UsageError("Trajectory::to_csv: cannot open " + path);
  out << "t";
  for (int d = 1; d <= dim(); ++d) out << ",x" << d;
  out << "\n";
  out << std::setprecision(17);
  for (int i = 0; i < size(); ++i) {
    out << times[i];
    for (int d = 0; d < dim(); ++d) out << "," << states(d, i);
    out << "\n";
  }
}

Trajectory Trajectory::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("Trajectory::from_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw UsageError("Trajectory::from_csv: empty file " + path);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw UsageError("Trajectory::from_csv: no data rows in " + path);
  Trajectory traj;
  const int n = int(rows.size());
  const int d = int(rows[0].size()) - 1;
  traj.times.resize(n);
  traj.states.resize(d, n);
  for (int i = 0; i < n; ++i) {
    traj.times[i] = rows[i][0];
    for (int j = 0; j < d; ++j) traj.states(j, i) = rows[i][j + 1];
  }
  return traj;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// Error weights: 5th-order solution minus embedded 4th-order.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output coefficients (Hairer, Norsett & Wanner).
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

struct DenseSegment {
  double t0 = 0.0, h = 0.0;
  VectorXd r1, r2, r3, r4, r5;

  void build(double t, double step, const VectorXd& y0, const VectorXd& y1, const VectorXd& k1,
             const VectorXd& k3, const VectorXd& k4, const VectorXd& k5, const VectorXd& k6,
             const VectorXd& k7) {
    t0 = t;
    h = step;
    r1 = y0;
    r2 = y1 - y0;
    r3 = step * k1 - r2;
    r4 = r2 - step * k7 - r3;
    r5 = step * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
  }

  VectorXd eval(double t) const {
    const double s = (t - t0) / h;
    const double s1 = 1.0 - s;
    return r1 + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5)));
  }
};

}  // namespace

Trajectory integrate_adaptive(const OdeRhs& rhs, const VectorXd& x0, double t0, double tf,
                              const IntegratorConfig& config, const VectorXd* dense_times,
                              StepSequence* record, const StepSequence* replay) {
  config.validate();
  if (tf == t0) throw UsageError("integrate_adaptive: empty time span");
  const double dir = tf > t0 ? 1.0 : -1.0;
  const int n = int(x0.size());
  if (record) record->steps.clear();
  size_t replay_cursor = 0;

  std::vector<double> out_times;
  std::vector<VectorXd> out_states;
  int dense_cursor = 0;
  const bool dense = dense_times != nullptr;
  if (dense) {
    while (dense_cursor < dense_times->size() &&
           dir * ((*dense_times)[dense_cursor] - t0) <= 1e-14 * std::abs(tf - t0)) {
      out_times.push_back((*dense_times)[dense_cursor]);
      out_states.push_back(x0);
      ++dense_cursor;
    }
  } else {
    out_times.push_back(t0);
    out_states.push_back(x0);
  }

  VectorXd y = x0, y1(n), err(n), ytmp(n);
  VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  DenseSegment seg;

  double t = t0;
  double h = dir * std::min({config.h_init, config.h_max, std::abs(tf - t0)});
  rhs(t, y, k1);
  if (!k1.allFinite()) throw DivergenceError("integrate_adaptive: non-finite rhs at start", t, y);

  bool last_reject_nonfinite = false;
  for (int step = 0; step < config.max_steps; ++step) {
    if (dir * (t - tf) >= 0.0) {
      if (dense) {
        // flush dense times that coincide with tf up to roundoff
        while (dense_cursor < dense_times->size() &&
               dir * ((*dense_times)[dense_cursor] - tf) <= 1e-9 * std::abs(tf - t0)) {
          out_times.push_back((*dense_times)[dense_cursor]);
          out_states.push_back(y);
          ++dense_cursor;
        }
      }
      Trajectory traj;
      traj.times = Eigen::Map<VectorXd>(out_times.data(), long(out_times.size()));
      traj.states.resize(n, long(out_states.size()));
      for (size_t i = 0; i < out_states.size(); ++i) traj.states.col(long(i)) = out_states[i];
      return traj;
    }
    if (replay) {
      // roundoff can leave a sliver after the recorded steps; close it
      h = replay_cursor < replay->steps.size() ? replay->steps[replay_cursor++] : (tf - t);
    }
    if (dir * (t + h - tf) > 0.0) h = tf - t;

    ytmp = y + h * (a21 * k1);
    rhs(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(t + h, ytmp, k6);
    y1 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    rhs(t + h, y1, k7);

    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err_norm = 0.0;
    for (int i = 0; i < n; ++i) {
      const double sk = config.atol + config.rtol * std::max(std::abs(y[i]), std::abs(y1[i]));
      const double q = err[i] / sk;
      err_norm += q * q;
    }
    err_norm = std::sqrt(err_norm / double(n));
    if (replay) {
      // error control disabled: take the replayed step unconditionally
      if (!y1.allFinite())
        throw DivergenceError("integrate_adaptive: non-finite state during replay", t, y);
      if (dense && dense_cursor < dense_times->size()) {
        seg.build(t, h, y, y1, k1, k3, k4, k5, k6, k7);
        while (dense_cursor < dense_times->size()) {
          const double td = (*dense_times)[dense_cursor];
          if (dir * (td - (t + h)) > 1e-14 * std::abs(h)) break;
          out_times.push_back(td);
          out_states.push_back(seg.eval(td));
          ++dense_cursor;
        }
      }
      t += h;
      y.swap(y1);
      k1.swap(k7);
      if (!dense) {
        out_times.push_back(t);
        out_states.push_back(y);
      }
      continue;
    }
    if (!std::isfinite(err_norm)) {
      // overflow in a trial step: shrink hard; divergence is reported only
      // when the step size underflows while this keeps happening
      last_reject_nonfinite = true;
      h *= 0.2;
      if (std::abs(h) < 1e-15 * std::max(1.0, std::abs(t)))
        throw DivergenceError("integrate_adaptive: non-finite rhs output", t, y);
      continue;
    }
    last_reject_nonfinite = false;

    if (err_norm <= 1.0) {
      // accepted
      if (record) record->steps.push_back(h);
      if (dense) {
        if (dense_cursor < dense_times->size()) {
          seg.build(t, h, y, y1, k1, k3, k4, k5, k6, k7);
          while (dense_cursor < dense_times->size()) {
            const double td = (*dense_times)[dense_cursor];
            if (dir * (td - (t + h)) > 1e-14 * std::abs(h)) break;
            out_times.push_back(td);
            out_states.push_back(seg.eval(td));
            ++dense_cursor;
          }
        }
      }
      t += h;
      y.swap(y1);
      k1.swap(k7);  // FSAL
      if (!dense) {
        out_times.push_back(t);
        out_states.push_back(y);
      }
      const double fac = std::clamp(0.9 * std::pow(std::max(err_norm, 1e-12), -0.2), 0.2, 5.0);
      h = dir * std::min(std::abs(h) * fac, config.h_max);
    } else {
      const double fac = std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 1.0);
      h *= fac;
    }
    if (std::abs(h) < 1e-15 * std::max(1.0, std::abs(t))) {
      if (last_reject_nonfinite)
        throw DivergenceError("integrate_adaptive: non-finite rhs output", t, y);
      throw NonConvergenceError("integrate_adaptive: step size underflow", t, y);
    }
  }
  throw NonConvergenceError("integrate_adaptive: max_steps exceeded", t, y);
}

void rk4_step(const OdeRhs& rhs, double t, double h, const VectorXd& x, VectorXd& out) {
  const int n = int(x.size());
  VectorXd k1(n), k2(n), k3(n), k4(n), tmp(n);
  rhs(t, x, k1);
  tmp = x + 0.5 * h * k1;
  rhs(t + 0.5 * h, tmp, k2);
  tmp = x + 0.5 * h * k2;
  rhs(t + 0.5 * h, tmp, k3);
  tmp = x + h * k3;
  rhs(t + h, tmp, k4);
  out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Trajectory integrate_rk4_fixed(const OdeRhs& rhs, const VectorXd& x0, double t0, double tf,
                               double h) {
  if (!(h > 0.0)) throw UsageError("integrate_rk4_fixed: h must be positive");
  if (tf == t0) throw UsageError("integrate_rk4_fixed: empty time span");
  const int n_steps = std::max(1, int(std::llround(std::abs(tf - t0) / h)));
  const double step = (tf - t0) / double(n_steps);

  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(x0.size(), n_steps + 1);
  traj.times[0] = t0;
  traj.states.col(0) = x0;
  VectorXd x = x0, next(x0.size());
  for (int i = 0; i < n_steps; ++i) {
    const double t = t0 + step * double(i);
    rk4_step(rhs, t, step, x, next);
    if (!next.allFinite())
      throw DivergenceError("integrate_rk4_fixed: non-finite state", t, x);
    x = next;
    traj.times[i + 1] = (i + 1 == n_steps) ? tf : t0 + step * double(i + 1);
    traj.states.col(i + 1) = x;
  }
  return traj;
}

}  // namespace pmpc
