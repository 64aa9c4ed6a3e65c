#include "phantom/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace phantom {

static_assert(std::endian::native == std::endian::little,
              "TNSR1 writer assumes a little-endian host");

namespace {
constexpr char kMagic[5] = {'T', 'N', 'S', 'R', '1'};
}

void write_tnsr1(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 5);
    const std::uint8_t rank = std::uint8_t(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : t.shape()) {
        const std::uint32_t v = std::uint32_t(d);
        os.write(reinterpret_cast<const char*>(&v), 4);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const float f = float(t.at(i));
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!os) throw ValueError("TNSR1 write failed");
}

Tensor read_tnsr1(std::istream& is) {
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw ValueError("not a TNSR1 stream (bad magic)");
    std::uint8_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is || rank == 0) throw ValueError("TNSR1: bad rank");
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        if (!is || v == 0) throw ValueError("TNSR1: bad dimension");
        shape[i] = int(v);
    }
    std::vector<real> data(shape_numel(shape));
    for (auto& x : data) {
        float f = 0;
        is.read(reinterpret_cast<char*>(&f), 4);
        x = real(f);
    }
    if (!is) throw ValueError("TNSR1: truncated payload");
    return Tensor(std::move(shape), std::move(data));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        os.write(contents.data(), std::streamsize(contents.size()));
        if (!os) throw ValueError("failed to write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void save_tnsr1(const std::filesystem::path& path, const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tnsr1(os, t);
    write_file_atomic(path, os.str());
}

Tensor load_tnsr1(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValueError("cannot open " + path.string());
    return read_tnsr1(is);
}

} // namespace phantom
