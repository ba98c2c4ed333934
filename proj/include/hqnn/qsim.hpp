#pragma once

#include <complex>
#include <cstdint>

namespace hqnn::qsim {

/// Amplitudes of a single qubit, alpha|0> + beta|1>.
struct QubitState {
    std::complex<double> alpha{1.0, 0.0};
    std::complex<double> beta{0.0, 0.0};

    double norm2() const {
        return std::norm(alpha) + std::norm(beta);
    }
};

/// 2x2 unitary in the computational basis.
struct Gate {
    std::complex<double> u[2][2];

    static Gate identity();
    static Gate hadamard();
    static Gate pauli_y();

    /// Largest absolute deviation of u^dagger u from the identity.
    double unitarity_error() const;
};

struct MeasurementResult {
    double p0 = 0.0;
    double p1 = 0.0;
};

enum class BackendMode { analytic, sampled };

/// Analytic mode reads exact probabilities off the statevector; sampled mode
/// estimates them from Bernoulli draws of a seeded generator.
struct QuantumBackend {
    BackendMode mode = BackendMode::analytic;
    std::uint64_t shots = 0;
    std::uint64_t rng_seed = 0;
};

QuantumBackend analytic_backend();
QuantumBackend sampled_backend(std::uint64_t shots, std::uint64_t rng_seed);

/// Left-multiplies the state by the gate. Rejects matrices whose unitarity
/// error exceeds 1e-9.
QubitState apply_gate(const QubitState& state, const Gate& gate);

/// Rotation about the Bloch Y-axis:
/// [[cos t/2, -sin t/2], [sin t/2, cos t/2]].
Gate ry_gate(double theta);

/// Outcome probabilities p0 = |alpha|^2, p1 = |beta|^2, normalized by the
/// state norm so they sum to one.
MeasurementResult measure(const QubitState& state);

/// P(1) of the circuit |0> -> H -> Ry(theta) -> measure.
double circuit_forward(double theta, const QuantumBackend& backend);

/// d p1 / d theta via evaluations at theta +- pi/2 (analytic backend).
double param_shift_grad(double theta);

/// Monte-Carlo estimate of P(1) from `shots` Bernoulli draws.
double sample_probability(double theta, std::uint64_t shots,
                          std::uint64_t seed);

} // namespace hqnn::qsim
