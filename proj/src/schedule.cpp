#include "conlab/schedule.hpp"

#include <cmath>
#include <sstream>

#include "conlab/common.hpp"

namespace conlab {

std::string to_string(ScheduleForm form) {
  return form == ScheduleForm::LinearSigma ? "linear-sigma" : "geometric-sigma";
}

ScheduleForm schedule_form_from_string(const std::string& name) {
  if (name == "linear-sigma") return ScheduleForm::LinearSigma;
  if (name == "geometric-sigma") return ScheduleForm::GeometricSigma;
  throw ConfigError("unknown schedule form '" + name + "'");
}

Schedule::Schedule(ScheduleForm form, double sigma_min, double sigma_max, double t0, double T)
    : form_(form), sigma_min_(sigma_min), sigma_max_(sigma_max), t0_(t0), T_(T) {
  if (!(t0 > 0.0) || !std::isfinite(t0)) throw DomainError("schedule: t0 must be positive");
  if (!(T > t0) || !std::isfinite(T)) throw DomainError("schedule: T must exceed t0");
  if (form == ScheduleForm::GeometricSigma && !(sigma_min > 0.0 && sigma_max > sigma_min))
    throw DomainError("schedule: geometric form needs 0 < sigma_min < sigma_max");
}

Schedule Schedule::linear(double t0, double T) {
  return Schedule(ScheduleForm::LinearSigma, 0.0, 0.0, t0, T);
}

Schedule Schedule::geometric(double sigma_min, double sigma_max, double t0, double T) {
  return Schedule(ScheduleForm::GeometricSigma, sigma_min, sigma_max, t0, T);
}

void Schedule::check_time(double t) const {
  if (t >= t0_ && t <= T_) return;
  std::ostringstream msg;
  msg.precision(17);
  if (t < t0_)
    msg << "time " << t << " is below the lower bound t0=" << t0_;
  else if (t > T_)
    msg << "time " << t << " is above the upper bound T=" << T_;
  else
    msg << "time is not a number";
  throw DomainError(msg.str());
}

double Schedule::sigma_unchecked(double t) const {
  if (form_ == ScheduleForm::LinearSigma) return t;
  return sigma_min_ * std::pow(sigma_max_ / sigma_min_, t / T_);
}

double Schedule::sigma(double t) const {
  check_time(t);
  return sigma_unchecked(t);
}

double Schedule::sigma2(double t) const {
  const double s = sigma(t);
  return s * s;
}

double Schedule::g2(double t) const {
  check_time(t);
  if (form_ == ScheduleForm::LinearSigma) return 2.0 * t;
  // d/dt sigma^2 = 2 sigma^2 log(sigma_max / sigma_min) / T
  const double s = sigma_unchecked(t);
  return 2.0 * s * s * std::log(sigma_max_ / sigma_min_) / T_;
}

double Schedule::g(double t) const { return std::sqrt(g2(t)); }

}  // namespace conlab
