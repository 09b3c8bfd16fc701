#pragma once

#include <array>
#include <cstdint>

namespace dipir {

/// What a random stream is used for. Part of the stream key so that
/// independent decisions never share draws.
enum class Purpose : std::uint8_t {
    Camera = 1,
    Emitter = 2,
    Bsdf = 3,
    Crop = 4,
    Guidance = 5,
    Init = 6,
};

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Counter-based uniform stream. A stream is fully determined by its key, so
/// identical keys replay identical draws on any thread or platform.
class RngStream {
public:
    RngStream(std::uint64_t base_seed, std::uint32_t pixel_index, std::uint32_t sample_index, std::uint32_t bounce,
              Purpose purpose);

    /// Next uniform draw in [0, 1).
    double next();

    /// Next raw 32-bit word.
    std::uint32_t next_u32();

private:
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
};

/// Convenience: the stream for one (pixel, sample, bounce, purpose) key.
inline RngStream rng_stream(std::uint64_t base_seed, std::uint32_t pixel_index, std::uint32_t sample_index,
                            std::uint32_t bounce, Purpose purpose) {
    return {base_seed, pixel_index, sample_index, bounce, purpose};
}

/// Mixes a seed with a tag into a new 64-bit seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace dipir
