#include "rtatl/flow_io.hpp"

#include <cstdint>
#include <cstdio>
#include <memory>
#include <vector>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {
struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

Tensor read_flo(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open flow file '" + path + "'");
    float magic = 0.0f;
    int32_t w = 0, h = 0;
    if (std::fread(&magic, 4, 1, fp.get()) != 1 || std::fread(&w, 4, 1, fp.get()) != 1 ||
        std::fread(&h, 4, 1, fp.get()) != 1)
        throw DataError("truncated flow header in '" + path + "'");
    if (magic != kFloMagic) throw DataError("bad .flo magic in '" + path + "' (endianness?)");
    if (w < 1 || h < 1 || w > 99999 || h > 99999)
        throw DataError("implausible flow size in '" + path + "'");

    std::vector<float> raw(static_cast<size_t>(w) * h * 2);
    if (std::fread(raw.data(), 4, raw.size(), fp.get()) != raw.size())
        throw DataError("flow file '" + path + "' is too short");

    Tensor flow(Shape{2, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            flow.at(0, y, x) = raw[(static_cast<size_t>(y) * w + x) * 2];
            flow.at(1, y, x) = raw[(static_cast<size_t>(y) * w + x) * 2 + 1];
        }
    return flow;
}

void write_flo(const std::string& path, const Tensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2)
        throw ShapeError("write_flo: flow must be [2,h,w], got " + shape_str(flow.shape));
    const int32_t h = flow.dim(1), w = flow.dim(2);
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write flow file '" + path + "'");
    const float magic = kFloMagic;
    std::fwrite(&magic, 4, 1, fp.get());
    std::fwrite(&w, 4, 1, fp.get());
    std::fwrite(&h, 4, 1, fp.get());
    std::vector<float> raw(static_cast<size_t>(w) * h * 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            raw[(static_cast<size_t>(y) * w + x) * 2] = static_cast<float>(flow.at(0, y, x));
            raw[(static_cast<size_t>(y) * w + x) * 2 + 1] = static_cast<float>(flow.at(1, y, x));
        }
    if (std::fwrite(raw.data(), 4, raw.size(), fp.get()) != raw.size())
        throw DataError("short write to '" + path + "'");
}

}  // namespace rtatl
