#pragma once

#include <string>

namespace conlab {

enum class ScheduleForm { LinearSigma, GeometricSigma };

std::string to_string(ScheduleForm form);
ScheduleForm schedule_form_from_string(const std::string& name);

/*!
 * Variance-exploding noise schedule on [t0, T].
 *
 *   linear-sigma:     sigma(t) = t
 *   geometric-sigma:  sigma(t) = sigma_min * (sigma_max / sigma_min)^(t / T)
 *
 * g^2(t) is the analytic derivative of sigma^2(t). All evaluations reject
 * t outside [t0, T].
 */
class Schedule {
 public:
  static Schedule linear(double t0 = 0.01, double T = 5.0);
  static Schedule geometric(double sigma_min, double sigma_max, double t0, double T);

  ScheduleForm form() const { return form_; }
  double t0() const { return t0_; }
  double T() const { return T_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }

  double sigma(double t) const;
  double sigma2(double t) const;
  double g2(double t) const;
  double g(double t) const;

  /// Throws DomainError naming the violated bound.
  void check_time(double t) const;
  bool contains(double t) const { return t >= t0_ && t <= T_; }

 private:
  Schedule(ScheduleForm form, double sigma_min, double sigma_max, double t0, double T);
  double sigma_unchecked(double t) const;

  ScheduleForm form_;
  double sigma_min_;
  double sigma_max_;
  double t0_;
  double T_;
};

}  // namespace conlab
