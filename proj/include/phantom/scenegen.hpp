#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phantom/nms.hpp"
#include "phantom/tensor.hpp"

namespace phantom::scene {

// splitmix64 / xoshiro256** with the reference constants; hand-rolled so
// dataset generation is bit-identical across platforms and libraries.
struct SplitMix64 {
    std::uint64_t state;
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
};

class Xoshiro256ss {
public:
    explicit Xoshiro256ss(std::uint64_t seed) {
        SplitMix64 sm{seed};
        for (auto& w : s_) w = sm.next();
    }
    std::uint64_t next();
    // uniform in [lo, hi)
    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi); // inclusive bounds

private:
    std::uint64_t s_[4];
};

struct ObjectLabel {
    int class_id = 0;
    nms::Box box; // pixels, x1<x2, y1<y2, inside [0,S]
    bool occlusion_free = true;
};

struct Scene {
    Tensor image; // [3,S,S] in [0,1]
    std::vector<ObjectLabel> objects;
    std::uint64_t seed = 0;
};

struct GenParams {
    int image_size = 160;
    int min_objects = 2;
    int max_objects = 6;
    double min_size_frac = 0.10; // object extent as a fraction of S
    double max_size_frac = 0.32;
    int num_classes = 4;
    double noise_level = 0.02; // uniform pixel noise amplitude
};

// Deterministic per (seed, params); scene i draws from its own stream
// derived from (seed, i). Object placement is biased toward the ground
// band so object spatial statistics are non-uniform.
std::vector<Scene> generate(std::uint64_t seed, int count, const GenParams& params);

// P6 binary PPM, 8-bit, channels quantized with round-to-nearest.
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& bytes);

// Dataset layout: NNNNNN.ppm + annotations.jsonl (+ manifest.txt).
void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                  const GenParams& params, std::uint64_t seed);
std::vector<Scene> load_dataset(const std::filesystem::path& dir);

} // namespace phantom::scene
