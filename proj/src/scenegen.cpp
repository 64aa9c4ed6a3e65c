#include "phantom/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "phantom/tensor_io.hpp"

namespace phantom::scene {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace

std::uint64_t Xoshiro256ss::next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Xoshiro256ss::uniform(double lo, double hi) {
    const double u = double(next() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
}

int Xoshiro256ss::uniform_int(int lo, int hi) {
    return lo + int(next() % std::uint64_t(hi - lo + 1));
}

namespace {

struct Rgb {
    double r, g, b;
};

void fill_rect(Tensor& img, int s, int x1, int y1, int x2, int y2, Rgb c) {
    real* d = img.data();
    for (int y = std::max(0, y1); y < std::min(s, y2); ++y)
        for (int x = std::max(0, x1); x < std::min(s, x2); ++x) {
            d[std::size_t(0) * s * s + std::size_t(y) * s + x] = real(c.r);
            d[std::size_t(1) * s * s + std::size_t(y) * s + x] = real(c.g);
            d[std::size_t(2) * s * s + std::size_t(y) * s + x] = real(c.b);
        }
}

void put_px(Tensor& img, int s, int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= s || y >= s) return;
    real* d = img.data();
    d[std::size_t(y) * s + x] = real(c.r);
    d[std::size_t(s) * s + std::size_t(y) * s + x] = real(c.g);
    d[2 * std::size_t(s) * s + std::size_t(y) * s + x] = real(c.b);
}

// Per-class shape + palette; classes are strongly color-coded.
void draw_object(Tensor& img, int s, int class_id, const nms::Box& b, Xoshiro256ss& rng) {
    const double jit = rng.uniform(-0.06, 0.06);
    const int x1 = int(b.x1), y1 = int(b.y1), x2 = int(b.x2), y2 = int(b.y2);
    const int w = x2 - x1, h = y2 - y1;
    switch (class_id) {
        case 0: { // block: red rectangle with darker top stripe
            Rgb body{0.82 + jit, 0.13, 0.14};
            fill_rect(img, s, x1, y1, x2, y2, body);
            fill_rect(img, s, x1, y1, x2, y1 + std::max(1, h / 4),
                      {0.55 + jit, 0.08, 0.10});
            break;
        }
        case 1: { // wedge: green upward triangle
            Rgb c{0.12, 0.72 + jit, 0.18};
            for (int y = 0; y < h; ++y) {
                const double half = 0.5 * w * double(y + 1) / h;
                const int cx = x1 + w / 2;
                for (int x = int(cx - half); x <= int(cx + half); ++x)
                    put_px(img, s, x, y1 + y, c);
            }
            break;
        }
        case 2: { // disk: blue circle
            Rgb c{0.15, 0.22, 0.85 + jit};
            const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
            const double rad = 0.5 * std::min(w, h);
            for (int y = y1; y < y2; ++y)
                for (int x = x1; x < x2; ++x)
                    if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <=
                        rad * rad)
                        put_px(img, s, x, y, c);
            break;
        }
        default: { // post: tall yellow bar
            fill_rect(img, s, x1, y1, x2, y2, {0.92 + jit, 0.84, 0.10});
            break;
        }
    }
}

nms::Box size_for_class(int class_id, double extent) {
    switch (class_id) {
        case 0: return {0, 0, real(extent), real(extent / 1.6)};
        case 1: return {0, 0, real(extent), real(extent * 0.9)};
        case 2: return {0, 0, real(extent), real(extent)};
        default: return {0, 0, real(std::max(3.0, extent * 0.3)), real(extent)};
    }
}

} // namespace

std::vector<Scene> generate(std::uint64_t seed, int count, const GenParams& p) {
    if (count < 1) throw ValueError("scenegen: count must be >= 1");
    if (p.min_objects < 0 || p.max_objects < p.min_objects)
        throw ValueError("scenegen: bad objects-per-image range");
    if (p.min_size_frac <= 0 || p.max_size_frac < p.min_size_frac)
        throw ValueError("scenegen: bad size range");
    if (p.max_size_frac > 1.0)
        throw ValueError("scenegen: object larger than image (max_size_frac > 1)");

    const int s = p.image_size;
    std::vector<Scene> scenes;
    scenes.reserve(std::size_t(count));
    // class quota counters keep the mix within +-1 of uniform over the run
    std::vector<int> class_count(std::size_t(p.num_classes), 0);
    int total_objects = 0;

    for (int i = 0; i < count; ++i) {
        SplitMix64 mix{seed};
        mix.state ^= 0x6A09E667F3BCC909ULL * std::uint64_t(i + 1);
        Scene sc;
        sc.seed = mix.next();
        Xoshiro256ss rng(sc.seed);
        sc.image = Tensor::zeros({3, s, s});

        const int horizon = int(s * rng.uniform(0.40, 0.50));
        const double skyshade = rng.uniform(-0.05, 0.05);
        fill_rect(sc.image, s, 0, 0, s, horizon,
                  {0.55 + skyshade, 0.70 + skyshade, 0.90});
        const double ground = rng.uniform(0.36, 0.46);
        fill_rect(sc.image, s, 0, horizon, s, s, {ground, ground, ground * 0.95});

        const int n_obj = rng.uniform_int(p.min_objects, p.max_objects);
        for (int k = 0; k < n_obj; ++k) {
            // balanced class quota: most under-represented class first
            int cls = 0;
            for (int c = 1; c < p.num_classes; ++c)
                if (class_count[c] < class_count[cls]) cls = c;
            const double extent = rng.uniform(p.min_size_frac * s, p.max_size_frac * s);
            nms::Box dims = size_for_class(cls, extent);
            const double w = dims.x2, h = dims.y2;

            nms::Box box;
            bool clear = false;
            for (int attempt = 0; attempt < 20; ++attempt) {
                // ground-band bias: objects mostly below the horizon
                const bool low = rng.uniform(0, 1) < 0.8;
                const double ymin = low ? std::max(0.0, double(horizon) - 0.2 * h) : 0.0;
                const double y1 = rng.uniform(ymin, s - h - 1);
                const double x1 = rng.uniform(0, s - w - 1);
                box = {real(x1), real(y1), real(x1 + w), real(y1 + h)};
                clear = true;
                for (const auto& other : sc.objects)
                    if (nms::iou(box, other.box) > real(0.25)) {
                        clear = false;
                        break;
                    }
                if (clear) break;
            }
            draw_object(sc.image, s, cls, box, rng);
            ObjectLabel lab;
            lab.class_id = cls;
            lab.box = box;
            lab.occlusion_free = clear;
            if (!clear)
                for (auto& other : sc.objects)
                    if (nms::iou(box, other.box) > 0) other.occlusion_free = false;
            sc.objects.push_back(lab);
            class_count[std::size_t(cls)] += 1;
            total_objects += 1;
        }

        if (p.noise_level > 0) {
            real* d = sc.image.data();
            for (std::size_t j = 0; j < sc.image.numel(); ++j) {
                d[j] += real(rng.uniform(-p.noise_level, p.noise_level));
                d[j] = std::clamp(d[j], real(0), real(1));
            }
        }
        scenes.push_back(std::move(sc));
    }
    (void)total_objects;
    return scenes;
}

std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.shape()[0] != 3)
        throw ValueError("encode_ppm expects a [3,H,W] tensor, got " +
                         shape_str(image.shape()));
    const int h = image.shape()[1], w = image.shape()[2];
    std::ostringstream os;
    os << "P6\n" << w << " " << h << "\n255\n";
    const real* d = image.data();
    std::string pix(std::size_t(3) * h * w, '\0');
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const real v = d[(std::size_t(c) * h + y) * w + x];
                const int q = int(std::lround(std::clamp(v, real(0), real(1)) * 255));
                pix[(std::size_t(y) * w + x) * 3 + c] = char(q);
            }
    return os.str() + pix;
}

Tensor decode_ppm(const std::string& bytes) {
    std::istringstream is(bytes);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw ValueError("decode_ppm: not a P6 stream");
    auto next_token = [&]() -> long {
        std::string tok;
        while (is >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(is, rest);
                continue;
            }
            return std::stol(tok);
        }
        throw ValueError("decode_ppm: truncated header");
    };
    const long w = next_token(), h = next_token(), maxval = next_token();
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ValueError("decode_ppm: unsupported header");
    is.get(); // single whitespace after maxval
    Tensor img = Tensor::zeros({3, int(h), int(w)});
    std::string pix(std::size_t(3) * w * h, '\0');
    is.read(pix.data(), std::streamsize(pix.size()));
    if (is.gcount() != std::streamsize(pix.size()))
        throw ValueError("decode_ppm: truncated pixel data");
    real* d = img.data();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                d[(std::size_t(c) * h + y) * w + x] =
                    real(static_cast<unsigned char>(pix[(std::size_t(y) * w + x) * 3 + c])) /
                    real(255);
    return img;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes,
                  const GenParams& p, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::ostringstream ann;
    char name[32];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        std::snprintf(name, sizeof(name), "%06zu.ppm", i);
        write_file_atomic(dir / name, encode_ppm(scenes[i].image));
        nlohmann::json rec;
        rec["image"] = name;
        rec["seed"] = scenes[i].seed;
        auto& objs = rec["objects"] = nlohmann::json::array();
        for (const auto& o : scenes[i].objects)
            objs.push_back({{"class_id", o.class_id},
                            {"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                            {"occlusion_free", o.occlusion_free}});
        ann << rec.dump() << "\n";
    }
    write_file_atomic(dir / "annotations.jsonl", ann.str());

    std::ostringstream man;
    man << "seed=" << seed << "\ncount=" << scenes.size()
        << "\nimage_size=" << p.image_size << "\nmin_objects=" << p.min_objects
        << "\nmax_objects=" << p.max_objects << "\nmin_size_frac=" << p.min_size_frac
        << "\nmax_size_frac=" << p.max_size_frac << "\nnum_classes=" << p.num_classes
        << "\nnoise_level=" << p.noise_level << "\n";
    write_file_atomic(dir / "manifest.txt", man.str());
}

std::vector<Scene> load_dataset(const std::filesystem::path& dir) {
    std::ifstream ann(dir / "annotations.jsonl");
    if (!ann) throw ValueError("cannot open " + (dir / "annotations.jsonl").string());
    std::vector<Scene> scenes;
    std::string line;
    while (std::getline(ann, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        Scene sc;
        std::ifstream img(dir / rec["image"].get<std::string>(), std::ios::binary);
        std::stringstream buf;
        buf << img.rdbuf();
        sc.image = decode_ppm(buf.str());
        sc.seed = rec.value("seed", std::uint64_t(0));
        for (const auto& o : rec["objects"]) {
            ObjectLabel lab;
            lab.class_id = o["class_id"].get<int>();
            const auto& b = o["box"];
            lab.box = {real(b[0].get<double>()), real(b[1].get<double>()),
                       real(b[2].get<double>()), real(b[3].get<double>())};
            lab.occlusion_free = o.value("occlusion_free", true);
            sc.objects.push_back(lab);
        }
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

} // namespace phantom::scene
