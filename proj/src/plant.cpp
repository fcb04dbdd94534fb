#include "dmpc/plant.hpp"

#include <cmath>

#include "dmpc/qp.hpp"

namespace dmpc::plant {

void PlantConfig::validate() const {
  if (!(m1 > 0.0) || !(m2 > 0.0)) throw ConfigError("plant masses must be positive");
  if (!(dt > 0.0)) throw ConfigError("plant dt must be positive");
  if (!(v0 > 0.0)) throw ConfigError("plant v0 must be positive");
  if (substeps < 1) throw ConfigError("plant substeps must be >= 1");
}

double spring(const PlantConfig& cfg, double x) { return cfg.a * x + cfg.b * x * x * x; }

double damper(const PlantConfig& cfg, double v) { return cfg.d * v + cfg.e * std::tanh(v / cfg.v0); }

State derivative(const PlantConfig& cfg, const State& s, double u) {
  const double dx = s[0] - s[2];
  const double dv = s[1] - s[3];
  const double coupling = spring(cfg, dx) + damper(cfg, dv);
  State out;
  out[0] = s[1];
  out[1] = (10.0 * u - spring(cfg, s[0]) - damper(cfg, s[1]) - coupling) / cfg.m1;
  out[2] = s[3];
  out[3] = (-spring(cfg, s[2]) - damper(cfg, s[3]) + coupling) / cfg.m2;
  return out;
}

State rk4_step(const PlantConfig& cfg, const State& s, double u) {
  const double h = cfg.dt / cfg.substeps;
  State x = s;
  for (int i = 0; i < cfg.substeps; ++i) {
    const State k1 = derivative(cfg, x, u);
    const State k2 = derivative(cfg, x + 0.5 * h * k1, u);
    const State k3 = derivative(cfg, x + 0.5 * h * k2, u);
    const State k4 = derivative(cfg, x + h * k3, u);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (!x.allFinite()) throw DivergenceError("plant state diverged");
  return x;
}

double energy(const PlantConfig& cfg, const State& s) {
  auto potential = [&](double x) { return 0.5 * cfg.a * x * x + 0.25 * cfg.b * x * x * x * x; };
  return 0.5 * cfg.m1 * s[1] * s[1] + 0.5 * cfg.m2 * s[3] * s[3] + potential(s[0]) + potential(s[2]) +
         potential(s[0] - s[2]);
}

}  // namespace dmpc::plant
