#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace dmpc {

/// Raised when the plant state stops being finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace plant {

/// (x1, v1, x2, v2): positions and velocities of the two masses.
using State = Eigen::Vector4d;

struct PlantConfig {
  double m1 = 0.1;
  double m2 = 0.01;
  double a = 1.0;
  double b = 1.0;
  double d = 0.5;
  double e = 0.5;
  double v0 = 0.01;
  double dt = 0.02;
  double output_scale = 2.5;
  /// RK4 substeps per sample; the tanh friction makes the ODE stiff at v ~ 0.
  int substeps = 1000;

  void validate() const;
};

double spring(const PlantConfig& cfg, double x);
double damper(const PlantConfig& cfg, double v);

/// Two masses, force 10 u on the first, coupled through a spring and a damper.
State derivative(const PlantConfig& cfg, const State& s, double u);

/// Zero-order hold over cfg.dt using cfg.substeps classical RK4 stages.
State rk4_step(const PlantConfig& cfg, const State& s, double u);

/// Mechanical energy including the quartic spring potentials.
double energy(const PlantConfig& cfg, const State& s);

inline double output(const PlantConfig& cfg, const State& s) { return cfg.output_scale * s[2]; }

}  // namespace plant
}  // namespace dmpc
