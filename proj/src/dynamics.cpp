#include "odefit/dynamics.hpp"

#include <algorithm>
#include <mutex>

#include "json.hpp"

namespace odefit::dyn {

namespace {

using nlohmann::json;

SystemSpec make_pendulum() {
  SystemSpec s;
  s.id = SystemId::Pendulum;
  s.name = "pendulum";
  s.state_dim = 2;
  s.forcing_dim = 0;
  s.state_names = {"angle", "angular_velocity"};
  s.param_names = {"L", "tau"};
  s.param_units = {"m", "1/s"};
  s.theta_nominal = {0.90, 0.05};
  s.lower_bounds = {0.1, 0.001};
  s.upper_bounds = {2.0, 0.5};
  s.measured = {true, false};
  // the angle channel usually arrives through a pixel-to-angle transform,
  // so it carries an unknown constant offset
  s.offset_calibrated = {true, false};
  s.default_x0 = {0.5, 0.0};
  return s;
}

SystemSpec make_torricelli() {
  SystemSpec s;
  s.id = SystemId::Torricelli;
  s.name = "torricelli";
  s.state_dim = 1;
  s.forcing_dim = 0;
  s.state_names = {"height"};
  s.param_names = {"K"};
  s.param_units = {"sqrt(m)/s"};
  s.theta_nominal = {0.0128};
  s.lower_bounds = {0.001};
  s.upper_bounds = {0.1};
  s.measured = {true};
  s.offset_calibrated = {false};
  s.clamp_nonnegative = {true};  // empty tank is absorbing
  s.default_x0 = {0.25};
  return s;
}

SystemSpec make_led() {
  SystemSpec s;
  s.id = SystemId::Led;
  s.name = "led";
  s.state_dim = 1;
  s.forcing_dim = 0;
  s.state_names = {"intensity"};
  s.param_names = {"gamma"};
  s.param_units = {"1/s"};
  s.theta_nominal = {0.92};
  s.lower_bounds = {0.01};
  s.upper_bounds = {5.0};
  s.measured = {true};
  s.offset_calibrated = {false};
  s.default_x0 = {1.0};
  return s;
}

SystemSpec make_sliding_block() {
  SystemSpec s;
  s.id = SystemId::SlidingBlock;
  s.name = "sliding_block";
  s.state_dim = 1;
  s.forcing_dim = 0;
  s.state_names = {"velocity"};
  s.param_names = {"alpha", "mu"};
  s.param_units = {"rad", ""};
  s.theta_nominal = {25.0 * M_PI / 180.0, 0.2};
  s.lower_bounds = {10.0 * M_PI / 180.0, 0.1};
  s.upper_bounds = {45.0 * M_PI / 180.0, 0.5};
  s.measured = {true};
  s.offset_calibrated = {false};
  s.default_x0 = {0.0};
  return s;
}

SystemSpec make_free_fall() {
  SystemSpec s;
  s.id = SystemId::FreeFall;
  s.name = "free_fall";
  s.state_dim = 1;
  s.forcing_dim = 0;
  s.state_names = {"velocity"};
  s.param_names = {"g"};
  s.param_units = {"m/s^2"};
  s.theta_nominal = {9.8};
  s.lower_bounds = {3.0};
  s.upper_bounds = {20.0};
  s.measured = {true};
  s.offset_calibrated = {false};
  s.fixed = {{"k_drag", 0.01}};
  s.default_x0 = {0.0};
  return s;
}

SystemSpec make_rover() {
  SystemSpec s;
  s.id = SystemId::Rover;
  s.name = "rover";
  s.state_dim = 4;
  s.forcing_dim = 3;
  s.state_names = {"x", "y", "heading", "speed"};
  s.param_names = {"a", "b", "r", "m", "cm"};
  s.param_units = {"m", "m", "m", "kg", "m"};
  s.theta_nominal = {0.178, 0.144, 0.201, 26.88, 0.112};
  s.lower_bounds = {0.05, 0.05, 0.05, 10.0, 0.03};
  s.upper_bounds = {0.5, 0.5, 0.6, 60.0, 0.4};
  s.measured = {true, true, false, false};
  s.offset_calibrated = {false, false, false, false};
  s.fixed = {{"wheelbase", 0.32}, {"k_motor", 1.0}, {"k_friction", 0.15}, {"c_drag", 0.42}};
  s.default_x0 = {0.0, 0.0, 0.0, 0.0};
  return s;
}

SystemSpec make_rotor() {
  SystemSpec s;
  s.id = SystemId::Rotor;
  s.name = "rotor";
  s.state_dim = 4;
  s.forcing_dim = 1;
  s.state_names = {"speed", "speed_rate", "thrust", "torque"};
  s.param_names = {"k_thrust", "k_torque", "k_p", "tau2"};
  s.param_units = {"N s^2/rad^2", "N m s^2/rad^2", "", "s"};
  s.theta_nominal = {1.1, 1.3, 0.91, 0.012};
  s.lower_bounds = {0.2, 0.2, 0.2, 0.002};
  s.upper_bounds = {4.0, 4.0, 2.5, 0.1};
  s.measured = {true, false, true, true};
  s.offset_calibrated = {false, false, false, false};
  s.fixed = {{"zeta", 0.7}};
  s.default_x0 = {0.0, 0.0, 0.0, 0.0};
  return s;
}

SystemSpec make_lotka_volterra() {
  SystemSpec s;
  s.id = SystemId::LotkaVolterra;
  s.name = "lotka_volterra";
  s.state_dim = 2;
  s.forcing_dim = 0;
  s.state_names = {"prey", "predator"};
  s.param_names = {"alpha", "beta", "delta", "gamma"};
  s.param_units = {"1/s", "1/s", "1/s", "1/s"};
  s.theta_nominal = {1.1, 0.4, 0.1, 0.4};
  s.lower_bounds = {0.05, 0.05, 0.01, 0.05};
  s.upper_bounds = {5.0, 5.0, 5.0, 5.0};
  s.measured = {true, true};
  s.offset_calibrated = {false, false};
  s.default_x0 = {6.0, 2.0};
  return s;
}

SystemSpec make_lorenz() {
  SystemSpec s;
  s.id = SystemId::Lorenz;
  s.name = "lorenz";
  s.state_dim = 3;
  s.forcing_dim = 0;
  s.state_names = {"x", "y", "z"};
  s.param_names = {"sigma", "rho", "beta"};
  s.param_units = {"", "", ""};
  s.theta_nominal = {10.0, 28.0, 8.0 / 3.0};
  s.lower_bounds = {1.0, 5.0, 0.5};
  s.upper_bounds = {20.0, 50.0, 5.0};
  s.measured = {true, true, true};
  s.offset_calibrated = {false, false, false};
  s.default_x0 = {1.0, 1.0, 1.0};
  return s;
}

const std::vector<SystemSpec>& registry() {
  static const std::vector<SystemSpec> specs = [] {
    std::vector<SystemSpec> v = {
        make_pendulum(),     make_torricelli(), make_led(),
        make_sliding_block(), make_free_fall(), make_rover(),
        make_rotor(),        make_lotka_volterra(), make_lorenz()};
    for (const auto& s : v) validate(s);
    return v;
  }();
  return specs;
}

json spec_to_json(const SystemSpec& s) {
  json j;
  j["name"] = s.name;
  j["state_dim"] = s.state_dim;
  j["forcing_dim"] = s.forcing_dim;
  j["state_names"] = s.state_names;
  j["param_names"] = s.param_names;
  j["param_units"] = s.param_units;
  j["theta_nominal"] = s.theta_nominal;
  j["lower_bounds"] = s.lower_bounds;
  j["upper_bounds"] = s.upper_bounds;
  j["measured"] = std::vector<bool>(s.measured.begin(), s.measured.end());
  j["offset_calibrated"] =
      std::vector<bool>(s.offset_calibrated.begin(), s.offset_calibrated.end());
  j["fixed"] = s.fixed;
  j["default_x0"] = s.default_x0;
  return j;
}

}  // namespace

void validate(const SystemSpec& spec) {
  const std::size_t d = static_cast<std::size_t>(spec.state_dim);
  const std::size_t k = spec.param_names.size();
  if (spec.state_dim <= 0) throw std::invalid_argument(spec.name + ": state_dim must be positive");
  if (spec.forcing_dim < 0) throw std::invalid_argument(spec.name + ": negative forcing_dim");
  if (spec.theta_nominal.size() != k || spec.lower_bounds.size() != k ||
      spec.upper_bounds.size() != k)
    throw std::invalid_argument(spec.name + ": parameter metadata size mismatch");
  if (spec.state_names.size() != d || spec.measured.size() != d ||
      spec.offset_calibrated.size() != d || spec.default_x0.size() != d)
    throw std::invalid_argument(spec.name + ": state metadata size mismatch");
  if (!spec.clamp_nonnegative.empty() && spec.clamp_nonnegative.size() != d)
    throw std::invalid_argument(spec.name + ": clamp_nonnegative size mismatch");
  for (std::size_t i = 0; i < k; ++i) {
    if (!(0.0 < spec.lower_bounds[i] && spec.lower_bounds[i] < spec.theta_nominal[i] &&
          spec.theta_nominal[i] < spec.upper_bounds[i]))
      throw std::invalid_argument(spec.name + ": bounds must satisfy 0 < l < nominal < up for " +
                                  spec.param_names[i]);
  }
  if (std::none_of(spec.measured.begin(), spec.measured.end(), [](bool b) { return b; }))
    throw std::invalid_argument(spec.name + ": at least one state must be measured");
}

const SystemSpec& registry_lookup(const std::string& name) {
  for (const auto& s : registry())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown system: " + name);
}

std::vector<std::string> registry_names() {
  std::vector<std::string> out;
  for (const auto& s : registry()) out.push_back(s.name);
  return out;
}

void ForcingSignal::validate() const {
  if (timestamps.empty()) throw std::invalid_argument("forcing: empty signal");
  if (values.size() != timestamps.size() * static_cast<std::size_t>(width))
    throw std::invalid_argument("forcing: value/timestamp size mismatch");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      throw std::invalid_argument("forcing: timestamps must be strictly increasing");
}

void ForcingSignal::interpolate(double t, std::span<double> out) const {
  if (static_cast<int>(out.size()) != width)
    throw std::invalid_argument("forcing: output width mismatch");
  if (timestamps.empty()) throw std::invalid_argument("forcing: empty signal");
  const std::size_t n = timestamps.size();
  if (t <= timestamps.front()) {
    for (int c = 0; c < width; ++c) out[c] = values[static_cast<std::size_t>(c)];
    return;
  }
  if (t >= timestamps.back()) {
    const std::size_t base = (n - 1) * static_cast<std::size_t>(width);
    for (int c = 0; c < width; ++c) out[c] = values[base + static_cast<std::size_t>(c)];
    return;
  }
  const auto it = std::upper_bound(timestamps.begin(), timestamps.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - timestamps.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - timestamps[lo]) / (timestamps[hi] - timestamps[lo]);
  const std::size_t blo = lo * static_cast<std::size_t>(width);
  const std::size_t bhi = hi * static_cast<std::size_t>(width);
  for (int c = 0; c < width; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    out[c] = (1.0 - w) * values[blo + cc] + w * values[bhi + cc];
  }
}

std::string registry_json() {
  json j = json::array();
  for (const auto& s : registry()) j.push_back(spec_to_json(s));
  return j.dump(2);
}

SystemSpec spec_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  if (!j.contains("kind")) throw std::invalid_argument("system spec: missing \"kind\"");
  SystemSpec s = registry_lookup(j.at("kind").get<std::string>());
  if (j.contains("name")) s.name = j.at("name").get<std::string>();
  if (j.contains("theta_nominal")) s.theta_nominal = j.at("theta_nominal").get<std::vector<double>>();
  if (j.contains("lower_bounds")) s.lower_bounds = j.at("lower_bounds").get<std::vector<double>>();
  if (j.contains("upper_bounds")) s.upper_bounds = j.at("upper_bounds").get<std::vector<double>>();
  if (j.contains("measured")) {
    const auto m = j.at("measured").get<std::vector<bool>>();
    s.measured.assign(m.begin(), m.end());
  }
  if (j.contains("offset_calibrated")) {
    const auto m = j.at("offset_calibrated").get<std::vector<bool>>();
    s.offset_calibrated.assign(m.begin(), m.end());
  }
  if (j.contains("default_x0")) s.default_x0 = j.at("default_x0").get<std::vector<double>>();
  if (j.contains("fixed"))
    for (const auto& [key, val] : j.at("fixed").items()) s.fixed[key] = val.get<double>();
  validate(s);
  return s;
}

}  // namespace odefit::dyn
