#pragma once

// Counter-based random number generation with explicit stream derivation.
//
// The generator is Philox4x64-10 keyed by (master_seed, stream_id); each
// (key, block counter) pair maps to four 64-bit words, so any number of
// streams can be drawn from without coordination and a stream can be
// reconstructed exactly from its integer identity.  Stream ids are packed as
//
//   stream_id = run_id << 32 | (member + 1) << 8 | purpose      (member streams)
//   stream_id = run_id << 32 | purpose                          (run streams)
//
// with run_id < 2^32, member + 1 < 2^24 and purpose < 256, which makes the
// mapping (master_seed, run_id, purpose[, member]) -> stream collision-free.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sdeassim {

namespace detail {

inline constexpr std::uint64_t kPhiloxM0 = 0xD2E7470EE14C6C93ULL;
inline constexpr std::uint64_t kPhiloxM1 = 0xCA5A826395121157ULL;
inline constexpr std::uint64_t kPhiloxW0 = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kPhiloxW1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

inline std::array<std::uint64_t, 4> philox4x64_10(std::array<std::uint64_t, 4> ctr,
                                                  std::array<std::uint64_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint64_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

// 128-layer ziggurat tables for the standard normal (Doornik layout).
struct ZigguratTables {
    static constexpr int kLayers = 128;
    static constexpr double kR = 3.442619855899;
    static constexpr double kV = 9.91256303526217e-3;
    double x[kLayers + 1];
    double ratio[kLayers];
    double f[kLayers + 1];

    ZigguratTables() {
        const double fr = std::exp(-0.5 * kR * kR);
        x[0] = kV / fr;  // pseudo-width of the base strip
        x[1] = kR;
        x[kLayers] = 0.0;
        for (int i = 2; i < kLayers; ++i)
            x[i] = std::sqrt(-2.0 * std::log(kV / x[i - 1] + std::exp(-0.5 * x[i - 1] * x[i - 1])));
        for (int i = 0; i < kLayers; ++i) ratio[i] = x[i + 1] / x[i];
        for (int i = 0; i <= kLayers; ++i) f[i] = std::exp(-0.5 * x[i] * x[i]);
    }
};

inline const ZigguratTables& ziggurat() {
    static const ZigguratTables tables;
    return tables;
}

}  // namespace detail

class SeededRng {
public:
    SeededRng(std::uint64_t master_seed, std::uint64_t stream_id)
        : key_{master_seed, stream_id}, counter_(0), index_(4) {}

    [[nodiscard]] std::uint64_t master_seed() const { return key_[0]; }
    [[nodiscard]] std::uint64_t stream_id() const { return key_[1]; }

    std::uint64_t next_u64() {
        if (index_ == 4) {
            block_ = detail::philox4x64_10({counter_, 0, 0, 0}, key_);
            ++counter_;
            index_ = 0;
        }
        return block_[index_++];
    }

    // uniform on [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // unbiased uniform integer on {0, ..., bound-1}
    std::uint64_t uniform_below(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("uniform_below: bound must be positive");
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (lo < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * bound;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // standard normal via 128-layer ziggurat with exact tail sampling
    double gaussian() {
        const auto& z = detail::ziggurat();
        for (;;) {
            const std::uint64_t bits = next_u64();
            const int layer = static_cast<int>(bits & 127);
            // signed uniform on (-1, 1) from the remaining high bits
            const double u = (static_cast<double>(bits >> 11) * 0x1.0p-53) * 2.0 - 1.0;
            const double sample = u * z.x[layer];
            if (std::fabs(u) < z.ratio[layer]) return sample;
            if (layer == 0) return tail_sample(sample < 0.0);
            const double fcand = std::exp(-0.5 * sample * sample);
            if (z.f[layer + 1] + uniform() * (z.f[layer] - z.f[layer + 1]) < fcand) return sample;
        }
    }

private:
    double tail_sample(bool negative) {
        const double r = detail::ZigguratTables::kR;
        double xs, ys;
        do {
            xs = -std::log(1.0 - uniform()) / r;
            ys = -std::log(1.0 - uniform());
        } while (ys + ys < xs * xs);
        return negative ? -(r + xs) : (r + xs);
    }

    std::array<std::uint64_t, 2> key_;
    std::uint64_t counter_;
    std::array<std::uint64_t, 4> block_{};
    int index_;
};

inline constexpr std::uint64_t kMaxRunId = (1ULL << 32) - 1;
inline constexpr std::uint64_t kMaxPurpose = 255;
inline constexpr std::uint64_t kMaxMember = (1ULL << 24) - 2;

inline SeededRng derive_rng(std::uint64_t master_seed, std::uint64_t run_id, std::uint64_t purpose) {
    if (run_id > kMaxRunId) throw std::invalid_argument("derive_rng: run_id exceeds 2^32-1");
    if (purpose > kMaxPurpose) throw std::invalid_argument("derive_rng: purpose exceeds 255");
    return SeededRng(master_seed, (run_id << 32) | purpose);
}

inline SeededRng derive_member_rng(std::uint64_t master_seed, std::uint64_t run_id,
                                   std::uint64_t purpose, std::uint64_t member) {
    if (run_id > kMaxRunId) throw std::invalid_argument("derive_member_rng: run_id exceeds 2^32-1");
    if (purpose > kMaxPurpose) throw std::invalid_argument("derive_member_rng: purpose exceeds 255");
    if (member > kMaxMember) throw std::invalid_argument("derive_member_rng: member exceeds 2^24-2");
    return SeededRng(master_seed, (run_id << 32) | ((member + 1) << 8) | purpose);
}

// increments of a standard Wiener process over a step of length h,
// i.e. n independent N(0, h) draws
inline void wiener_increments(SeededRng& rng, double h, std::vector<double>& out) {
    if (h < 0.0) throw std::invalid_argument("wiener_increments: h must be nonnegative");
    const double s = std::sqrt(h);
    for (auto& v : out) v = s * rng.gaussian();
}

}  // namespace sdeassim
