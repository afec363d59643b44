#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "colony/error.hpp"
#include "colony/rng.hpp"
#include "colony/tensor.hpp"

namespace colony {

inline constexpr std::uint32_t idx_image_magic = 2051; // 0x00000803
inline constexpr std::uint32_t idx_label_magic = 2049; // 0x00000801
inline constexpr int image_side = 28;
inline constexpr int image_pixels = image_side * image_side;

struct labeled_image {
    std::array<float, image_pixels> pixels{}; // intensities in [0,1]
    int label = 0;
};

namespace detail {

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::string& buf, std::size_t off, const char* what) {
    if (off + 4 > buf.size())
        throw parse_error(buf.size(), std::string("file ends before ") + what);
    return (std::uint32_t(std::uint8_t(buf[off])) << 24) |
           (std::uint32_t(std::uint8_t(buf[off + 1])) << 16) |
           (std::uint32_t(std::uint8_t(buf[off + 2])) << 8) |
           std::uint32_t(std::uint8_t(buf[off + 3]));
}

inline void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(char((v >> 24) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char(v & 0xff));
}

} // namespace detail

// Parse an IDX image/label file pair (big-endian headers, magics 2051/2049).
// Every failure names the byte offset of the offending field.
inline std::vector<labeled_image> parse_idx(const std::filesystem::path& images_path,
                                            const std::filesystem::path& labels_path) {
    const std::string img = detail::slurp(images_path);
    const std::string lab = detail::slurp(labels_path);

    const std::uint32_t im = detail::be32(img, 0, "image magic");
    if (im != idx_image_magic)
        throw parse_error(0, "expected image magic 2051, got " + std::to_string(im) + " in " +
                                 images_path.string());
    const std::uint32_t lm = detail::be32(lab, 0, "label magic");
    if (lm != idx_label_magic)
        throw parse_error(0, "expected label magic 2049, got " + std::to_string(lm) + " in " +
                                 labels_path.string());

    const std::uint32_t n = detail::be32(img, 4, "image count");
    const std::uint32_t rows = detail::be32(img, 8, "row count");
    const std::uint32_t cols = detail::be32(img, 12, "column count");
    if (rows != image_side || cols != image_side)
        throw parse_error(8, "expected 28x28 images, got " + std::to_string(rows) + "x" +
                                 std::to_string(cols));
    const std::uint32_t nl = detail::be32(lab, 4, "label count");
    if (n != nl)
        throw parse_error(4, "image count " + std::to_string(n) + " does not match label count " +
                                 std::to_string(nl));

    const std::size_t need_img = 16 + std::size_t(n) * image_pixels;
    if (img.size() < need_img)
        throw parse_error(img.size(), "truncated image payload: header declares " +
                                          std::to_string(need_img) + " bytes");
    const std::size_t need_lab = 8 + std::size_t(n);
    if (lab.size() < need_lab)
        throw parse_error(lab.size(), "truncated label payload: header declares " +
                                          std::to_string(need_lab) + " bytes");

    std::vector<labeled_image> out(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint8_t lv = std::uint8_t(lab[8 + i]);
        if (lv > 9) throw parse_error(8 + i, "label value " + std::to_string(lv) + " out of 0..9");
        out[i].label = lv;
        const char* src = img.data() + 16 + std::size_t(i) * image_pixels;
        for (int k = 0; k < image_pixels; ++k)
            out[i].pixels[std::size_t(k)] = float(std::uint8_t(src[k])) / 255.0f;
    }
    return out;
}

// Write items back out as an IDX pair (the synthetic path uses this so splits
// are self-contained files).
inline void write_idx(const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path,
                      const std::vector<labeled_image>& items) {
    std::string img, lab;
    detail::put_be32(img, idx_image_magic);
    detail::put_be32(img, std::uint32_t(items.size()));
    detail::put_be32(img, image_side);
    detail::put_be32(img, image_side);
    detail::put_be32(lab, idx_label_magic);
    detail::put_be32(lab, std::uint32_t(items.size()));
    for (const auto& it : items) {
        for (float v : it.pixels)
            img.push_back(char(std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
        lab.push_back(char(std::uint8_t(it.label)));
    }
    std::ofstream oi(images_path, std::ios::binary | std::ios::trunc);
    std::ofstream ol(labels_path, std::ios::binary | std::ios::trunc);
    if (!oi || !ol) throw io_error("cannot write IDX files");
    oi.write(img.data(), std::streamsize(img.size()));
    ol.write(lab.data(), std::streamsize(lab.size()));
    if (!oi || !ol) throw io_error("short write of IDX files");
}

struct split_provenance {
    std::uint64_t images_hash = 0;
    std::uint64_t labels_hash = 0;
    std::uint64_t seed = 0;
};

struct dataset_split {
    std::vector<labeled_image> train;
    std::vector<labeled_image> test;
    split_provenance provenance;
};

namespace detail {

// Largest-remainder quotas: each class's share matches the source within +-1.
inline std::vector<int> stratified_quotas(const std::vector<int>& class_counts, int total_take) {
    const double total = double(std::accumulate(class_counts.begin(), class_counts.end(), 0));
    const int k = int(class_counts.size());
    std::vector<int> quota(k, 0);
    std::vector<std::pair<double, int>> frac;
    int assigned = 0;
    for (int c = 0; c < k; ++c) {
        const double exact = total_take * double(class_counts[c]) / total;
        quota[c] = int(exact);
        assigned += quota[c];
        frac.push_back({exact - double(quota[c]), c});
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; i < total_take - assigned; ++i) ++quota[std::size_t(frac[std::size_t(i)].second)];
    return quota;
}

} // namespace detail

// Seeded stratified subsample without replacement. Train and test are drawn
// from disjoint source indices.
inline dataset_split constrained_split(const std::vector<labeled_image>& source, int n_train,
                                       int n_test, std::uint64_t seed) {
    if (n_train < 1 || n_test < 1) throw input_error("split sizes must be positive");
    if (std::size_t(n_train) + std::size_t(n_test) > source.size())
        throw input_error("requested split of " + std::to_string(n_train + n_test) +
                          " exceeds source size " + std::to_string(source.size()));

    std::vector<std::vector<int>> by_class(10);
    for (std::size_t i = 0; i < source.size(); ++i)
        by_class[std::size_t(source[i].label)].push_back(int(i));
    std::vector<int> counts(10);
    for (int c = 0; c < 10; ++c) {
        counts[std::size_t(c)] = int(by_class[std::size_t(c)].size());
        rng r(derive_seed(seed, "class", std::uint64_t(c)));
        r.shuffle(by_class[std::size_t(c)].begin(), by_class[std::size_t(c)].end());
    }
    // train quotas against the source, test quotas against what remains;
    // largest-remainder totals never exceed availability
    const auto train_quota = detail::stratified_quotas(counts, n_train);
    std::vector<int> remaining(10);
    for (int c = 0; c < 10; ++c)
        remaining[std::size_t(c)] = counts[std::size_t(c)] - train_quota[std::size_t(c)];
    const auto test_quota = detail::stratified_quotas(remaining, n_test);

    dataset_split out;
    out.provenance.seed = seed;
    for (int c = 0; c < 10; ++c) {
        const auto& pool = by_class[std::size_t(c)];
        int at = 0;
        for (int i = 0; i < train_quota[std::size_t(c)]; ++i)
            out.train.push_back(source[std::size_t(pool[std::size_t(at++)])]);
        for (int i = 0; i < test_quota[std::size_t(c)]; ++i)
            out.test.push_back(source[std::size_t(pool[std::size_t(at++)])]);
    }
    // deterministic presentation order
    rng r(derive_seed(seed, "order"));
    r.shuffle(out.train.begin(), out.train.end());
    r.shuffle(out.test.begin(), out.test.end());
    return out;
}

namespace detail {

// Ten crisp stroke patterns, jittered by up to 2 pixels, used wherever real
// digits are unavailable.
inline void draw_pattern(int cls, float intensity, int dx, int dy, std::array<float, 784>& px) {
    const auto put = [&](int x, int y, float v) {
        x += dx;
        y += dy;
        if (x >= 0 && x < 28 && y >= 0 && y < 28) {
            auto& p = px[std::size_t(y * 28 + x)];
            p = std::max(p, v);
        }
    };
    const int c = 14;
    switch (cls) {
    case 0: // ring
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x) {
                const double d = std::hypot(double(x - c), double(y - c));
                if (std::abs(d - 8.0) < 1.5) put(x, y, intensity);
            }
        break;
    case 1: // vertical bar
        for (int y = c - 9; y <= c + 9; ++y)
            for (int x = c - 1; x <= c + 1; ++x) put(x, y, intensity);
        break;
    case 2: // horizontal bar
        for (int x = c - 9; x <= c + 9; ++x)
            for (int y = c - 1; y <= c + 1; ++y) put(x, y, intensity);
        break;
    case 3: // two horizontal bars
        for (int x = c - 9; x <= c + 9; ++x)
            for (int t = 0; t < 2; ++t) {
                put(x, c - 6 + t, intensity);
                put(x, c + 6 + t, intensity);
            }
        break;
    case 4: // plus
        for (int t = -8; t <= 8; ++t)
            for (int u = -1; u <= 1; ++u) {
                put(c + t, c + u, intensity);
                put(c + u, c + t, intensity);
            }
        break;
    case 5: // X
        for (int t = -8; t <= 8; ++t)
            for (int u = 0; u < 2; ++u) {
                put(c + t, c + t + u, intensity);
                put(c + t, c - t + u, intensity);
            }
        break;
    case 6: // filled square
        for (int y = c - 4; y <= c + 4; ++y)
            for (int x = c - 4; x <= c + 4; ++x) put(x, y, intensity);
        break;
    case 7: // main diagonal
        for (int t = -9; t <= 9; ++t)
            for (int u = 0; u < 2; ++u) put(c + t, c + t + u, intensity);
        break;
    case 8: // anti-diagonal
        for (int t = -9; t <= 9; ++t)
            for (int u = 0; u < 2; ++u) put(c + t, c - t + u, intensity);
        break;
    default: // 9: hollow frame
        for (int t = -8; t <= 8; ++t)
            for (int u = 0; u < 2; ++u) {
                put(c + t, c - 8 + u, intensity);
                put(c + t, c + 7 + u, intensity);
                put(c - 8 + u, c + t, intensity);
                put(c + 7 + u, c + t, intensity);
            }
        break;
    }
}

} // namespace detail

// Deterministic 10-class stand-in corpus; labels cycle 0..9 so counts are
// exactly balanced when n is a multiple of 10.
inline std::vector<labeled_image> synthetic_fixture(int n, std::uint64_t seed) {
    if (n < 10) throw input_error("synthetic fixture needs n >= 10");
    std::vector<labeled_image> out(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        rng r(derive_seed(seed, "img", std::uint64_t(i)));
        labeled_image& im = out[std::size_t(i)];
        im.label = i % 10;
        const float intensity = float(0.75 + 0.25 * r.uniform());
        const int dx = int(r.below(5)) - 2;
        const int dy = int(r.below(5)) - 2;
        detail::draw_pattern(im.label, intensity, dx, dy, im.pixels);
        for (auto& p : im.pixels) {
            p += float(r.uniform() * 0.05);
            p = std::clamp(p, 0.0f, 1.0f);
        }
    }
    return out;
}

// (n,1,32,32) batch tensor: 28x28 images zero-padded by 2 on each side.
template <typename T = float>
tensor<T> to_batch(const std::vector<labeled_image>& items, const std::vector<int>& idx) {
    tensor<T> out({int(idx.size()), 1, 32, 32});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& im = items[std::size_t(idx[i])];
        for (int y = 0; y < 28; ++y)
            for (int x = 0; x < 28; ++x)
                out.at4(int(i), 0, y + 2, x + 2) = T(im.pixels[std::size_t(y * 28 + x)]);
    }
    return out;
}

inline std::vector<int> labels_of(const std::vector<labeled_image>& items,
                                  const std::vector<int>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = items[std::size_t(idx[i])].label;
    return out;
}

inline std::vector<int> all_indices(std::size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// Deterministic validation carve: shuffled indices, first `fraction` held out.
inline std::pair<std::vector<int>, std::vector<int>>
carve_validation(int n, double fraction, std::uint64_t seed) {
    if (fraction < 0 || fraction >= 1) throw input_error("validation fraction must be in [0,1)");
    std::vector<int> idx(std::size_t(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng r(derive_seed(seed, "validation"));
    r.shuffle(idx.begin(), idx.end());
    const int n_valid = int(std::lround(fraction * n));
    std::vector<int> valid(idx.begin(), idx.begin() + n_valid);
    std::vector<int> train(idx.begin() + n_valid, idx.end());
    return {std::move(train), std::move(valid)};
}

} // namespace colony
