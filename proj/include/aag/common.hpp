#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aag {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error taxonomy: configuration problems, malformed data, bad runtime
// inputs, adapter/model shape mismatches, and file I/O.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AdapterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. mt19937_64 has a fully specified sequence; the
// uniform/gaussian transforms below are hand-rolled so results do not
// depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two fresh uniforms per draw (no cached second value).
    double gauss(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        return mean + stddev * r * std::cos(two_pi * u2);
    }

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) {
        return static_cast<int>(uniform() * static_cast<double>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)],
                      v[static_cast<size_t>(uniform_int(i + 1))]);
        }
    }

    std::string serialize_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) {
            throw DataError("invalid rng state string");
        }
    }

  private:
    std::mt19937_64 eng_;
};

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Stable sub-seed so independent phases draw from independent streams.
inline uint64_t derive_seed(uint64_t seed, const std::string& tag) {
    uint64_t x = seed ^ fnv1a(tag);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

inline void fill_gauss(Mat& m, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = rng.gauss(0.0, stddev);
        }
    }
}

inline void fill_xavier_uniform(Mat& m, Rng& rng) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = rng.uniform(-bound, bound);
        }
    }
}

}  // namespace aag
