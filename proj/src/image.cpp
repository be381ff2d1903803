#include "dldl/image.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dldl {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'I', 'M', 'G', '0', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace

MultispectralImage MultispectralImage::zeros(int channels, int height, int width) {
    MultispectralImage img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.data.assign(std::size_t(channels) * std::size_t(height) * std::size_t(width), 0.0);
    img.band_names = default_band_names(channels);
    return img;
}

std::vector<std::string> MultispectralImage::default_band_names(int channels) {
    static const std::vector<std::string> kFive = {"B", "G", "R", "REDGE", "NIR"};
    if (channels == 5) return kFive;
    std::vector<std::string> names;
    names.reserve(std::size_t(channels));
    for (int c = 0; c < channels; ++c) {
        if (c < int(kFive.size()))
            names.push_back(kFive[std::size_t(c)]);
        else
            names.push_back("BAND" + std::to_string(c));
    }
    return names;
}

void MultispectralImage::validate() const {
    if (channels < 1 || height < 1 || width < 1) throw ShapeError("image dimensions must be positive");
    if (data.size() != std::size_t(channels) * std::size_t(height) * std::size_t(width))
        throw ShapeError("image data size does not match dimensions");
    if (band_names.size() != std::size_t(channels)) throw ShapeError("band name count does not match channels");
    for (double v : data)
        if (!std::isfinite(v)) throw NumericError("image contains non-finite values");
}

void save_image(const MultispectralImage& img, const std::string& path) {
    img.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image file '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, std::uint32_t(img.channels));
    write_u32(out, std::uint32_t(img.height));
    write_u32(out, std::uint32_t(img.width));
    for (const auto& name : img.band_names) {
        write_u32(out, std::uint32_t(name.size()));
        out.write(name.data(), std::streamsize(name.size()));
    }
    std::vector<float> buf(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) buf[i] = float(img.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
    if (!out) throw DataError("failed writing image file '" + path + "'");
}

MultispectralImage load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw DataError("not an image container file: '" + path + "'");
    MultispectralImage img;
    img.channels = int(read_u32(in));
    img.height = int(read_u32(in));
    img.width = int(read_u32(in));
    if (!in || img.channels < 1 || img.channels > 1024 || img.height < 1 || img.width < 1 ||
        img.height > 1 << 16 || img.width > 1 << 16)
        throw DataError("corrupt image header in '" + path + "'");
    img.band_names.resize(std::size_t(img.channels));
    for (auto& name : img.band_names) {
        std::uint32_t n = read_u32(in);
        if (!in || n > 256) throw DataError("corrupt band name in '" + path + "'");
        name.resize(n);
        in.read(name.data(), std::streamsize(n));
    }
    std::size_t count = std::size_t(img.channels) * std::size_t(img.height) * std::size_t(img.width);
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(count * sizeof(float)));
    if (!in) throw DataError("truncated image file '" + path + "'");
    img.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) img.data[i] = double(buf[i]);
    return img;
}

}  // namespace dldl
