#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace sphdiff {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A stream is addressed by (seed, purpose, sample_id). Counter words are laid
// out as
//
//   ctr[0], ctr[1]  64-bit block index within the stream (incremented per draw block)
//   ctr[2]          low 32 bits of sample_id
//   ctr[3]          (purpose << 24) | bits 32..55 of sample_id
//
// and the 64-bit seed is the key. Distinct (purpose, sample_id) pairs therefore
// never share a counter block, so streams can be consumed in any order or in
// parallel with identical results.
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key);
};

enum class Purpose : std::uint8_t {
    PriorSample = 1,
    DataSample = 2,
    Forward = 3,
    Training = 4,
    Shuffle = 5,
    Backward = 6,
    Diagnostics = 7,
    Test = 8,
};

inline constexpr std::uint64_t kMaxSampleId = (std::uint64_t{1} << 56) - 1;

class RngStream {
public:
    using result_type = std::uint32_t;

    RngStream(std::uint64_t seed, Purpose purpose, std::uint64_t sample_id);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
    result_type operator()() { return next_u32(); }

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform on the open interval (0, 1) with 53-bit resolution.
    double uniform();
    // Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Derive a child stream with the same seed/purpose but a different sample id.
    RngStream substream(std::uint64_t sample_id) const { return {seed_, purpose_, sample_id}; }

    std::uint64_t seed() const { return seed_; }
    Purpose purpose() const { return purpose_; }
    std::uint64_t sample_id() const { return sample_id_; }

private:
    void refill();

    std::uint64_t seed_;
    Purpose purpose_;
    std::uint64_t sample_id_;
    std::uint64_t block_index_ = 0;
    Philox4x32::Counter buffer_{};
    int buffer_pos_ = 4;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace sphdiff
