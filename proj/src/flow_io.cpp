#include "efraft/flow_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace efraft {

namespace {

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("io: cannot open '" + tmp + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("io: short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("io: cannot rename '" + tmp + "' to '" + path + "'");
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io: cannot open '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void put_i32(std::string& buf, std::int32_t v) {
    const std::uint32_t u = static_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

std::int32_t get_i32(const std::string& buf, std::size_t pos) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    return static_cast<std::int32_t>(u);
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const std::string& buf, std::size_t pos) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

Tensor read_flo(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 12) throw std::runtime_error("flo: '" + path + "' is too short for a header");
    if (buf.compare(0, 4, "PIEH") != 0) throw std::runtime_error("flo: '" + path + "' has a bad magic tag");
    const std::int32_t w = get_i32(buf, 4);
    const std::int32_t h = get_i32(buf, 8);
    if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
        throw std::runtime_error("flo: '" + path + "' has invalid extents " + std::to_string(w) + "x" +
                                 std::to_string(h));
    }
    const std::size_t expect = 12 + static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 8;
    if (buf.size() != expect) {
        throw std::runtime_error("flo: '" + path + "' holds " + std::to_string(buf.size()) + " bytes, expected " +
                                 std::to_string(expect));
    }
    Tensor flow({2, h, w});
    std::size_t pos = 12;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            flow.at(0, y, x) = static_cast<double>(get_f32(buf, pos));
            flow.at(1, y, x) = static_cast<double>(get_f32(buf, pos + 4));
            pos += 8;
        }
    }
    return flow;
}

void write_flo(const std::string& path, const Tensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2) {
        throw std::invalid_argument("flo: expected a [2,H,W] flow, got " + shape_str(flow.shape()));
    }
    const int h = flow.dim(1), w = flow.dim(2);
    std::string buf;
    buf.reserve(12 + static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 8);
    buf.append("PIEH");
    put_i32(buf, w);
    put_i32(buf, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            put_f32(buf, static_cast<float>(flow.at(0, y, x)));
            put_f32(buf, static_cast<float>(flow.at(1, y, x)));
        }
    }
    write_file_atomic(path, buf);
}

Tensor read_ppm(const std::string& path) {
    const std::string buf = read_file(path);
    std::size_t pos = 0;
    auto token = [&]() -> std::string {
        // skip whitespace and '#' comments
        while (pos < buf.size()) {
            if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (start == pos) throw std::runtime_error("ppm: '" + path + "' truncated header");
        return buf.substr(start, pos - start);
    };
    if (token() != "P6") throw std::runtime_error("ppm: '" + path + "' is not a binary P6 file");
    const int w = std::stoi(token());
    const int h = std::stoi(token());
    const int maxval = std::stoi(token());
    if (w <= 0 || h <= 0) throw std::runtime_error("ppm: '" + path + "' has invalid extents");
    if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    if (buf.size() - pos < need) throw std::runtime_error("ppm: '" + path + "' payload truncated");
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = static_cast<double>(static_cast<std::uint8_t>(buf[pos++])) / 255.0;
            }
        }
    }
    return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("ppm: expected a [3,H,W] image, got " + shape_str(image.shape()));
    }
    const int h = image.dim(1), w = image.dim(2);
    std::string buf = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    buf.reserve(buf.size() + static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                buf.push_back(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
            }
        }
    }
    write_file_atomic(path, buf);
}

namespace {

// Middlebury-style color wheel: 55 hues over six arcs.
const std::vector<std::array<double, 3>>& color_wheel() {
    static const std::vector<std::array<double, 3>> wheel = [] {
        const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        std::vector<std::array<double, 3>> w;
        for (int i = 0; i < RY; ++i) w.push_back({1.0, static_cast<double>(i) / RY, 0.0});
        for (int i = 0; i < YG; ++i) w.push_back({1.0 - static_cast<double>(i) / YG, 1.0, 0.0});
        for (int i = 0; i < GC; ++i) w.push_back({0.0, 1.0, static_cast<double>(i) / GC});
        for (int i = 0; i < CB; ++i) w.push_back({0.0, 1.0 - static_cast<double>(i) / CB, 1.0});
        for (int i = 0; i < BM; ++i) w.push_back({static_cast<double>(i) / BM, 0.0, 1.0});
        for (int i = 0; i < MR; ++i) w.push_back({1.0, 0.0, 1.0 - static_cast<double>(i) / MR});
        return w;
    }();
    return wheel;
}

}  // namespace

Tensor flow_to_color(const Tensor& flow, double cap) {
    if (flow.ndim() != 3 || flow.dim(0) != 2) {
        throw std::invalid_argument("flow_to_color: expected [2,H,W], got " + shape_str(flow.shape()));
    }
    const int h = flow.dim(1), w = flow.dim(2);
    double max_mag = cap;
    if (max_mag <= 0.0) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                max_mag = std::max(max_mag, std::hypot(flow.at(0, y, x), flow.at(1, y, x)));
    }
    if (max_mag <= 0.0) max_mag = 1.0;

    const auto& wheel = color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = flow.at(0, y, x), v = flow.at(1, y, x);
            const double rad = std::min(std::hypot(u, v) / max_mag, 1.0);
            const double a = std::atan2(v, u) / M_PI;  // [-1, 1]
            const double fk = (a + 1.0) / 2.0 * (ncols - 1);
            const int k0 = static_cast<int>(std::floor(fk)) % ncols;
            const int k1 = (k0 + 1) % ncols;
            const double f = fk - std::floor(fk);
            for (int c = 0; c < 3; ++c) {
                const double col = (1.0 - f) * wheel[static_cast<std::size_t>(k0)][static_cast<std::size_t>(c)] +
                                   f * wheel[static_cast<std::size_t>(k1)][static_cast<std::size_t>(c)];
                img.at(c, y, x) = 1.0 - rad * (1.0 - col);
            }
        }
    }
    return img;
}

}  // namespace efraft
