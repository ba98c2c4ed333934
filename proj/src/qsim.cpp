#include "hqnn/qsim.hpp"

#include <cmath>
#include <string>

#include "hqnn/errors.hpp"
#include "hqnn/rng.hpp"

namespace hqnn::qsim {

namespace {
constexpr double kUnitarityTol = 1e-9;
constexpr double kHalfPi = 1.5707963267948966;
} // namespace

Gate Gate::identity() {
    return Gate{{{{1.0, 0.0}, {0.0, 0.0}}, {{0.0, 0.0}, {1.0, 0.0}}}};
}

Gate Gate::hadamard() {
    const double s = 1.0 / std::sqrt(2.0);
    return Gate{{{{s, 0.0}, {s, 0.0}}, {{s, 0.0}, {-s, 0.0}}}};
}

Gate Gate::pauli_y() {
    return Gate{{{{0.0, 0.0}, {0.0, -1.0}}, {{0.0, 1.0}, {0.0, 0.0}}}};
}

double Gate::unitarity_error() const {
    // u^dagger u, element by element.
    double worst = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            std::complex<double> acc{0.0, 0.0};
            for (int k = 0; k < 2; ++k)
                acc += std::conj(u[k][i]) * u[k][j];
            const std::complex<double> target =
                i == j ? std::complex<double>{1.0, 0.0}
                       : std::complex<double>{0.0, 0.0};
            worst = std::max(worst, std::abs(acc - target));
        }
    return worst;
}

QuantumBackend analytic_backend() {
    return QuantumBackend{BackendMode::analytic, 0, 0};
}

QuantumBackend sampled_backend(std::uint64_t shots, std::uint64_t rng_seed) {
    if (shots < 1)
        throw ValidationError("sampled backend needs shots >= 1");
    return QuantumBackend{BackendMode::sampled, shots, rng_seed};
}

QubitState apply_gate(const QubitState& state, const Gate& gate) {
    const double err = gate.unitarity_error();
    if (!(err <= kUnitarityTol))
        throw ContractError("apply_gate: matrix is not unitary (deviation " +
                            std::to_string(err) + ")");
    QubitState out;
    out.alpha = gate.u[0][0] * state.alpha + gate.u[0][1] * state.beta;
    out.beta = gate.u[1][0] * state.alpha + gate.u[1][1] * state.beta;
    return out;
}

Gate ry_gate(double theta) {
    if (!std::isfinite(theta))
        throw ValidationError("ry_gate: angle must be finite");
    const double c = std::cos(theta / 2.0);
    const double s = std::sin(theta / 2.0);
    return Gate{{{{c, 0.0}, {-s, 0.0}}, {{s, 0.0}, {c, 0.0}}}};
}

MeasurementResult measure(const QubitState& state) {
    const double a2 = std::norm(state.alpha);
    const double b2 = std::norm(state.beta);
    // Dividing by the realized norm keeps p0 + p1 at one and pins the
    // symmetric points (theta 0, +-pi/2) to exact 0.5 / 1.0 / 0.0.
    const double n = a2 + b2;
    return MeasurementResult{a2 / n, b2 / n};
}

double circuit_forward(double theta, const QuantumBackend& backend) {
    if (backend.mode == BackendMode::sampled)
        return sample_probability(theta, backend.shots, backend.rng_seed);
    QubitState s;
    s = apply_gate(s, Gate::hadamard());
    s = apply_gate(s, ry_gate(theta));
    return measure(s).p1;
}

double param_shift_grad(double theta) {
    const QuantumBackend b = analytic_backend();
    return (circuit_forward(theta + kHalfPi, b) -
            circuit_forward(theta - kHalfPi, b)) /
           2.0;
}

double sample_probability(double theta, std::uint64_t shots,
                          std::uint64_t seed) {
    if (shots < 1)
        throw ValidationError("sample_probability: shots must be >= 1");
    const double p1 = circuit_forward(theta, analytic_backend());
    Rng rng(seed);
    std::uint64_t ones = 0;
    for (std::uint64_t i = 0; i < shots; ++i)
        if (rng.uniform() < p1) ++ones;
    return static_cast<double>(ones) / static_cast<double>(shots);
}

} // namespace hqnn::qsim
