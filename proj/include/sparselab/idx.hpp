#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparselab/matrix.hpp"

namespace sparselab {

namespace detail {

inline std::uint32_t read_be_u32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
    if (offset + 4 > buf.size())
        throw std::runtime_error("idx: " + path + " truncated at offset " + std::to_string(offset));
    return (static_cast<std::uint32_t>(buf[offset]) << 24) | (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(buf[offset + 2]) << 8) | static_cast<std::uint32_t>(buf[offset + 3]);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

struct IdxDataset {
    Matrix images;            // n x (rows*cols), normalized
    std::vector<int> labels;  // n
};

inline constexpr double kIdxPixelMean = 0.1307;
inline constexpr double kIdxPixelStd = 0.3081;

// Big-endian IDX image/label pair (magics 0x00000803 / 0x00000801). Pixels are
// scaled to [0,1] then normalized with mean 0.1307 and std 0.3081 and the
// images flattened row-major.
inline IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img_buf = detail::read_file(images_path);
    const auto lbl_buf = detail::read_file(labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(img_buf, 0, images_path);
    if (img_magic != 0x00000803u)
        throw std::runtime_error("idx: bad magic 0x" + std::to_string(img_magic) + " at offset 0 in " +
                                 images_path + " (expected 0x00000803)");
    const std::uint32_t lbl_magic = detail::read_be_u32(lbl_buf, 0, labels_path);
    if (lbl_magic != 0x00000801u)
        throw std::runtime_error("idx: bad magic 0x" + std::to_string(lbl_magic) + " at offset 0 in " +
                                 labels_path + " (expected 0x00000801)");

    const std::uint32_t n_images = detail::read_be_u32(img_buf, 4, images_path);
    const std::uint32_t rows = detail::read_be_u32(img_buf, 8, images_path);
    const std::uint32_t cols = detail::read_be_u32(img_buf, 12, images_path);
    const std::uint32_t n_labels = detail::read_be_u32(lbl_buf, 4, labels_path);
    if (n_images != n_labels)
        throw std::runtime_error("idx: image count " + std::to_string(n_images) + " != label count " +
                                 std::to_string(n_labels));
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    if (img_buf.size() != 16 + static_cast<std::size_t>(n_images) * pixels)
        throw std::runtime_error("idx: " + images_path + " truncated (expected " +
                                 std::to_string(16 + static_cast<std::size_t>(n_images) * pixels) + " bytes, got " +
                                 std::to_string(img_buf.size()) + ")");
    if (lbl_buf.size() != 8 + static_cast<std::size_t>(n_labels))
        throw std::runtime_error("idx: " + labels_path + " truncated");

    IdxDataset out;
    out.images = Matrix(n_images, pixels);
    out.labels.resize(n_labels);
    for (std::size_t i = 0; i < n_images; ++i)
        for (std::size_t p = 0; p < pixels; ++p) {
            const double v = static_cast<double>(img_buf[16 + i * pixels + p]) / 255.0;
            out.images(i, p) = (v - kIdxPixelMean) / kIdxPixelStd;
        }
    for (std::size_t i = 0; i < n_labels; ++i) out.labels[i] = static_cast<int>(lbl_buf[8 + i]);
    return out;
}

}  // namespace sparselab
