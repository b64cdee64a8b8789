#include "sphdiff/rng.hpp"

#include <cmath>
#include <numbers>

#include "sphdiff/errors.hpp"

namespace sphdiff {

namespace {

constexpr std::uint32_t kMulA = 0xD2511F53;
constexpr std::uint32_t kMulB = 0xCD9E8D57;
constexpr std::uint32_t kWeylA = 0x9E3779B9;
constexpr std::uint32_t kWeylB = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMulA, ctr[0], hi0, lo0);
        mulhilo(kMulB, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeylA;
        key[1] += kWeylB;
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t seed, Purpose purpose, std::uint64_t sample_id)
    : seed_(seed), purpose_(purpose), sample_id_(sample_id) {
    if (sample_id > kMaxSampleId) throw DomainError("RngStream: sample_id exceeds 56 bits");
}

void RngStream::refill() {
    const Philox4x32::Counter ctr = {
        static_cast<std::uint32_t>(block_index_),
        static_cast<std::uint32_t>(block_index_ >> 32),
        static_cast<std::uint32_t>(sample_id_),
        (static_cast<std::uint32_t>(purpose_) << 24) |
            static_cast<std::uint32_t>((sample_id_ >> 32) & 0xFFFFFF),
    };
    const Philox4x32::Key key = {static_cast<std::uint32_t>(seed_),
                                 static_cast<std::uint32_t>(seed_ >> 32)};
    buffer_ = Philox4x32::block(ctr, key);
    buffer_pos_ = 0;
    ++block_index_;
}

std::uint32_t RngStream::next_u32() {
    if (buffer_pos_ == 4) refill();
    return buffer_[buffer_pos_++];
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
}

double RngStream::uniform() {
    // 53 random bits plus half an ulp keeps the result strictly inside (0, 1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    cached_normal_ = r * std::sin(angle);
    has_cached_normal_ = true;
    return r * std::cos(angle);
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw DomainError("RngStream::below: empty range");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

}  // namespace sphdiff
