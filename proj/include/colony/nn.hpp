#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "colony/error.hpp"
#include "colony/tensor.hpp"

namespace colony {

enum class layer_kind {
    conv2d,
    max_pool,
    relu,
    batch_norm,
    residual_add,
    flatten,
    fully_connected,
    global_avg_pool,
    softmax,
};

enum class run_mode { train, eval };

// Geometry plus indices of the parameter blocks a layer reads. `in1`/`in2`
// index the activation list, where slot 0 is the input batch and slot i+1 is
// the output of layer i; residual_add is the only two-input layer.
struct layer_spec {
    layer_kind kind{};
    int in1 = -1;
    int in2 = -1;

    // conv2d
    int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
    int w = -1, b = -1;

    // batch_norm
    int channels = 0;
    int gamma = -1, beta = -1, rmean = -1, rvar = -1;

    // fully_connected
    int in_features = 0, out_features = 0;
};

template <typename T>
struct param_block {
    std::string id;
    tensor<T> values;
    tensor<T> grad;
    bool trainable = true; // false for batch-norm running statistics
};

namespace detail {

template <typename T>
using mat_rm = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using mat_cm = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

inline void sig_mix(std::uint64_t& h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
}

} // namespace detail

// Per-forward state kept for the backward pass. Owning it outside the network
// keeps eval-mode forwards const and concurrency-safe.
template <typename T>
struct forward_trace {
    std::vector<tensor<T>> act;                 // act[0] = batch, act[i+1] = layer i output
    struct layer_aux {
        std::vector<std::uint8_t> pool_arg;     // max_pool: winning offset per output element
        tensor<T> bn_xhat;                      // batch_norm: normalized input
        std::vector<T> bn_invstd;               // batch_norm: 1/sqrt(var+eps) per channel
        std::vector<T> bn_mean, bn_var;         // batch stats (for running-stat commit)
    };
    std::vector<layer_aux> aux;
    std::uint64_t signature = 0;                // hash of ReLU signs + pool argmaxes
    bool want_signature = false;
};

template <typename T>
class network {
public:
    static constexpr T bn_eps = T(1e-5);
    static constexpr double bn_momentum = 0.1;

    std::vector<layer_spec> layers;
    run_mode mode = run_mode::train;
    int input_hw = 32;
    int input_ch = 1;
    int classes = 10;
    bool grads_valid = false;

    int add_block(const std::string& id, std::vector<int> shape, bool trainable = true) {
        if (index_.count(id)) throw config_error("duplicate parameter block id: " + id);
        param_block<T> blk;
        blk.id = id;
        blk.values = tensor<T>(shape);
        blk.grad = tensor<T>(std::move(shape));
        blk.trainable = trainable;
        blocks_.push_back(std::move(blk));
        index_[id] = blocks_.size() - 1;
        return static_cast<int>(blocks_.size() - 1);
    }

    std::vector<param_block<T>>& blocks() { return blocks_; }
    const std::vector<param_block<T>>& blocks() const { return blocks_; }

    bool has_block(const std::string& id) const { return index_.count(id) != 0; }

    param_block<T>& block(const std::string& id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw address_error("unknown parameter block: " + id);
        return blocks_[it->second];
    }
    const param_block<T>& block(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw address_error("unknown parameter block: " + id);
        return blocks_[it->second];
    }

    void zero_grad() {
        for (auto& b : blocks_) b.grad.fill(T(0));
        grads_valid = false;
    }

    // Forward in the requested mode; train mode commits batch-norm running stats.
    tensor<T> forward(const tensor<T>& batch, run_mode m) {
        forward_trace<T> tr;
        forward_core(batch, m, tr);
        if (m == run_mode::train) commit_bn_stats(tr);
        return std::move(tr.act.back());
    }

    tensor<T> forward(const tensor<T>& batch) { return forward(batch, mode); }

    // Read-only eval forward; safe to call concurrently on disjoint batches.
    tensor<T> forward_eval(const tensor<T>& batch) const {
        forward_trace<T> tr;
        forward_core(batch, run_mode::eval, tr);
        return std::move(tr.act.back());
    }

    // Mean cross-entropy over the batch + gradients into every block.
    double loss_and_grad(const tensor<T>& batch, const std::vector<int>& labels) {
        forward_trace<T> tr;
        forward_core(batch, run_mode::train, tr);
        commit_bn_stats(tr);
        const double loss = backward(tr, labels);
        grads_valid = true;
        return loss;
    }

    // Loss only, without stat commits or gradients; used by the finite-difference oracle.
    double loss_only(const tensor<T>& batch, const std::vector<int>& labels,
                     std::uint64_t* signature = nullptr) const {
        forward_trace<T> tr;
        tr.want_signature = signature != nullptr;
        forward_core(batch, run_mode::train, tr);
        if (signature) *signature = tr.signature;
        return cross_entropy(tr.act.back(), labels);
    }

    void forward_core(const tensor<T>& batch, run_mode m, forward_trace<T>& tr) const {
        if (batch.ndim() != 4 || batch.dim(1) != input_ch || batch.dim(2) != input_hw ||
            batch.dim(3) != input_hw)
            throw config_error("batch shape " + tensor<T>::shape_str(batch.shape()) +
                               " does not match network input (n," + std::to_string(input_ch) +
                               "," + std::to_string(input_hw) + "," + std::to_string(input_hw) + ")");
        if (batch.dim(0) < 1) throw config_error("empty batch");

        tr.act.clear();
        tr.act.reserve(layers.size() + 1);
        tr.aux.assign(layers.size(), {});
        tr.act.push_back(batch);
        for (std::size_t i = 0; i < layers.size(); ++i)
            tr.act.push_back(forward_layer(i, m, tr));
    }

    double cross_entropy(const tensor<T>& probs, const std::vector<int>& labels) const {
        const int n = probs.dim(0);
        if (static_cast<int>(labels.size()) != n)
            throw input_error("label count does not match batch size");
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            if (labels[i] < 0 || labels[i] >= classes)
                throw input_error("label " + std::to_string(labels[i]) + " out of range 0.." +
                                  std::to_string(classes - 1));
            const double p = std::max(static_cast<double>(probs.at2(i, labels[i])), 1e-30);
            loss -= std::log(p);
        }
        return loss / double(n);
    }

private:
    std::vector<param_block<T>> blocks_;
    std::unordered_map<std::string, std::size_t> index_;

    void commit_bn_stats(const forward_trace<T>& tr) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const layer_spec& L = layers[i];
            if (L.kind != layer_kind::batch_norm) continue;
            auto& rm = blocks_[L.rmean].values;
            auto& rv = blocks_[L.rvar].values;
            const auto& aux = tr.aux[i];
            for (int c = 0; c < L.channels; ++c) {
                rm[c] = T((1.0 - bn_momentum) * double(rm[c]) + bn_momentum * double(aux.bn_mean[c]));
                rv[c] = T((1.0 - bn_momentum) * double(rv[c]) + bn_momentum * double(aux.bn_var[c]));
            }
        }
    }

    tensor<T> forward_layer(std::size_t li, run_mode m, forward_trace<T>& tr) const {
        const layer_spec& L = layers[li];
        const tensor<T>& x = tr.act[L.in1];
        switch (L.kind) {
        case layer_kind::conv2d: return conv_forward(L, x);
        case layer_kind::max_pool: return pool_forward(L, x, tr.aux[li], tr);
        case layer_kind::relu: return relu_forward(x, tr);
        case layer_kind::batch_norm: return bn_forward(L, x, m, tr.aux[li]);
        case layer_kind::residual_add: {
            const tensor<T>& y = tr.act[L.in2];
            if (!x.same_shape(y)) throw config_error("residual branches disagree on shape");
            tensor<T> out = x;
            for (std::size_t k = 0; k < out.numel(); ++k) out[k] += y[k];
            return out;
        }
        case layer_kind::flatten: {
            const int n = x.dim(0);
            return x.reshaped({n, static_cast<int>(x.numel()) / n});
        }
        case layer_kind::fully_connected: return fc_forward(L, x);
        case layer_kind::global_avg_pool: return gap_forward(x);
        case layer_kind::softmax: return softmax_forward(x);
        }
        throw config_error("unknown layer kind");
    }

    // --- conv2d (im2col + GEMM, per sample) ---

    static void im2col(const tensor<T>& x, int n, int ci, int hw, int k, int stride, int pad,
                       int oh, int ow, std::vector<T>& col) {
        const int K = ci * k * k;
        col.assign(static_cast<std::size_t>(K) * oh * ow, T(0));
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T* dst = col.data() + (static_cast<std::size_t>(oy) * ow + ox) * K;
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            T v = T(0);
                            if (iy >= 0 && iy < hw && ix >= 0 && ix < hw) v = x.at4(n, c, iy, ix);
                            dst[(c * k + ky) * k + kx] = v;
                        }
                    }
                }
            }
        }
    }

    tensor<T> conv_forward(const layer_spec& L, const tensor<T>& x) const {
        const int n = x.dim(0), ci = x.dim(1), h = x.dim(2);
        if (ci != L.in_ch) throw config_error("conv input channels mismatch");
        const int oh = (h + 2 * L.pad - L.ksize) / L.stride + 1;
        tensor<T> out({n, L.out_ch, oh, oh});
        const int K = ci * L.ksize * L.ksize;
        const int ohw = oh * oh;
        const auto& W = blocks_[L.w].values;
        const auto& B = blocks_[L.b].values;
        Eigen::Map<const detail::mat_rm<T>> Wm(W.data(), L.out_ch, K);
        std::vector<T> col;
        for (int i = 0; i < n; ++i) {
            im2col(x, i, ci, h, L.ksize, L.stride, L.pad, oh, oh, col);
            Eigen::Map<const detail::mat_cm<T>> Cm(col.data(), K, ohw);
            Eigen::Map<detail::mat_rm<T>> Om(out.data() + static_cast<std::size_t>(i) * L.out_ch * ohw,
                                             L.out_ch, ohw);
            Om.noalias() = Wm * Cm;
            for (int co = 0; co < L.out_ch; ++co) Om.row(co).array() += B[co];
        }
        return out;
    }

    void conv_backward(const layer_spec& L, const tensor<T>& x, const tensor<T>& dout,
                       tensor<T>& dx) {
        const int n = x.dim(0), ci = x.dim(1), h = x.dim(2);
        const int oh = dout.dim(2);
        const int K = ci * L.ksize * L.ksize;
        const int ohw = oh * oh;
        auto& Wb = blocks_[L.w];
        auto& Bb = blocks_[L.b];
        Eigen::Map<const detail::mat_rm<T>> Wm(Wb.values.data(), L.out_ch, K);
        Eigen::Map<detail::mat_rm<T>> dWm(Wb.grad.data(), L.out_ch, K);
        std::vector<T> col;
        detail::mat_cm<T> dcol(K, ohw);
        for (int i = 0; i < n; ++i) {
            im2col(x, i, ci, h, L.ksize, L.stride, L.pad, oh, oh, col);
            Eigen::Map<const detail::mat_cm<T>> Cm(col.data(), K, ohw);
            Eigen::Map<const detail::mat_rm<T>> dOm(
                dout.data() + static_cast<std::size_t>(i) * L.out_ch * ohw, L.out_ch, ohw);
            dWm.noalias() += dOm * Cm.transpose();
            for (int co = 0; co < L.out_ch; ++co) Bb.grad[co] += dOm.row(co).sum();
            dcol.noalias() = Wm.transpose() * dOm;
            // col2im scatter
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < oh; ++ox) {
                    const T* src = dcol.data() + (static_cast<std::size_t>(oy) * oh + ox) * K;
                    const int iy0 = oy * L.stride - L.pad;
                    const int ix0 = ox * L.stride - L.pad;
                    for (int c = 0; c < ci; ++c) {
                        for (int ky = 0; ky < L.ksize; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < L.ksize; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= h) continue;
                                dx.at4(i, c, iy, ix) += src[(c * L.ksize + ky) * L.ksize + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    // --- max pool 2x2 stride 2 ---

    tensor<T> pool_forward(const layer_spec&, const tensor<T>& x,
                           typename forward_trace<T>::layer_aux& aux, forward_trace<T>& tr) const {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2);
        if (h % 2 != 0) throw config_error("max_pool input height must be even");
        const int oh = h / 2;
        tensor<T> out({n, c, oh, oh});
        aux.pool_arg.assign(out.numel(), 0);
        std::size_t oi = 0;
        for (int i = 0; i < n; ++i) {
            for (int ch = 0; ch < c; ++ch) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < oh; ++ox, ++oi) {
                        const int iy = oy * 2, ix = ox * 2;
                        T best = x.at4(i, ch, iy, ix);
                        std::uint8_t arg = 0;
                        // first maximum wins on ties
                        const T v1 = x.at4(i, ch, iy, ix + 1);
                        const T v2 = x.at4(i, ch, iy + 1, ix);
                        const T v3 = x.at4(i, ch, iy + 1, ix + 1);
                        if (v1 > best) { best = v1; arg = 1; }
                        if (v2 > best) { best = v2; arg = 2; }
                        if (v3 > best) { best = v3; arg = 3; }
                        out[oi] = best;
                        aux.pool_arg[oi] = arg;
                        if (tr.want_signature) detail::sig_mix(tr.signature, arg + 1);
                    }
                }
            }
        }
        return out;
    }

    static void pool_backward(const tensor<T>& dout, const std::vector<std::uint8_t>& arg,
                              tensor<T>& dx) {
        const int n = dout.dim(0), c = dout.dim(1), oh = dout.dim(2);
        std::size_t oi = 0;
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < oh; ++ox, ++oi) {
                        const int iy = oy * 2 + (arg[oi] >> 1);
                        const int ix = ox * 2 + (arg[oi] & 1);
                        dx.at4(i, ch, iy, ix) += dout[oi];
                    }
    }

    // --- relu ---

    tensor<T> relu_forward(const tensor<T>& x, forward_trace<T>& tr) const {
        tensor<T> out = x;
        if (tr.want_signature) {
            std::uint64_t bits = 0;
            int nb = 0;
            for (std::size_t k = 0; k < out.numel(); ++k) {
                const bool pos = out[k] > T(0);
                bits = (bits << 1) | (pos ? 1u : 0u);
                if (++nb == 64) { detail::sig_mix(tr.signature, bits); bits = 0; nb = 0; }
                if (!pos) out[k] = T(0);
            }
            if (nb) detail::sig_mix(tr.signature, bits ^ (0xabcdull + nb));
        } else {
            for (std::size_t k = 0; k < out.numel(); ++k)
                if (out[k] < T(0)) out[k] = T(0);
        }
        return out;
    }

    // --- batch norm ---

    tensor<T> bn_forward(const layer_spec& L, const tensor<T>& x, run_mode m,
                         typename forward_trace<T>::layer_aux& aux) const {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (c != L.channels) throw config_error("batch_norm channel mismatch");
        const auto& gamma = blocks_[L.gamma].values;
        const auto& beta = blocks_[L.beta].values;
        tensor<T> out({n, c, h, w});
        aux.bn_invstd.assign(c, T(0));
        aux.bn_mean.assign(c, T(0));
        aux.bn_var.assign(c, T(0));
        const double cnt = double(n) * h * w;
        if (m == run_mode::train) {
            aux.bn_xhat = tensor<T>({n, c, h, w});
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int i = 0; i < n; ++i)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) s += double(x.at4(i, ch, y, xx));
                const double mu = s / cnt;
                double v = 0.0;
                for (int i = 0; i < n; ++i)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            const double d = double(x.at4(i, ch, y, xx)) - mu;
                            v += d * d;
                        }
                v /= cnt;
                const T invstd = T(1.0 / std::sqrt(v + double(bn_eps)));
                aux.bn_mean[ch] = T(mu);
                aux.bn_var[ch] = T(v);
                aux.bn_invstd[ch] = invstd;
                for (int i = 0; i < n; ++i)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            const T xh = (x.at4(i, ch, y, xx) - T(mu)) * invstd;
                            aux.bn_xhat.at4(i, ch, y, xx) = xh;
                            out.at4(i, ch, y, xx) = gamma[ch] * xh + beta[ch];
                        }
            }
        } else {
            const auto& rm = blocks_[L.rmean].values;
            const auto& rv = blocks_[L.rvar].values;
            for (int ch = 0; ch < c; ++ch) {
                const T invstd = T(1.0 / std::sqrt(double(rv[ch]) + double(bn_eps)));
                const T mu = rm[ch];
                for (int i = 0; i < n; ++i)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            out.at4(i, ch, y, xx) = gamma[ch] * (x.at4(i, ch, y, xx) - mu) * invstd + beta[ch];
            }
        }
        return out;
    }

    void bn_backward(const layer_spec& L, const typename forward_trace<T>::layer_aux& aux,
                     const tensor<T>& dout, tensor<T>& dx) {
        const int n = dout.dim(0), c = dout.dim(1), h = dout.dim(2), w = dout.dim(3);
        auto& gamma = blocks_[L.gamma];
        auto& beta = blocks_[L.beta];
        const double m = double(n) * h * w;
        for (int ch = 0; ch < c; ++ch) {
            double dg = 0.0, db = 0.0;
            for (int i = 0; i < n; ++i)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const double dy = double(dout.at4(i, ch, y, xx));
                        dg += dy * double(aux.bn_xhat.at4(i, ch, y, xx));
                        db += dy;
                    }
            gamma.grad[ch] += T(dg);
            beta.grad[ch] += T(db);
            const double g = double(gamma.values[ch]);
            const double invstd = double(aux.bn_invstd[ch]);
            const double k = g * invstd / m;
            for (int i = 0; i < n; ++i)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        const double dy = double(dout.at4(i, ch, y, xx));
                        const double xh = double(aux.bn_xhat.at4(i, ch, y, xx));
                        dx.at4(i, ch, y, xx) += T(k * (m * dy - db - xh * dg));
                    }
        }
    }

    // --- fully connected ---

    tensor<T> fc_forward(const layer_spec& L, const tensor<T>& x) const {
        const int n = x.dim(0);
        if (x.ndim() != 2 || x.dim(1) != L.in_features)
            throw config_error("fully_connected input features mismatch");
        const auto& W = blocks_[L.w].values;
        const auto& B = blocks_[L.b].values;
        tensor<T> out({n, L.out_features});
        Eigen::Map<const detail::mat_rm<T>> Xm(x.data(), n, L.in_features);
        Eigen::Map<const detail::mat_rm<T>> Wm(W.data(), L.out_features, L.in_features);
        Eigen::Map<detail::mat_rm<T>> Om(out.data(), n, L.out_features);
        Om.noalias() = Xm * Wm.transpose();
        for (int j = 0; j < L.out_features; ++j) Om.col(j).array() += B[j];
        return out;
    }

    void fc_backward(const layer_spec& L, const tensor<T>& x, const tensor<T>& dout,
                     tensor<T>& dx) {
        const int n = x.dim(0);
        auto& Wb = blocks_[L.w];
        auto& Bb = blocks_[L.b];
        Eigen::Map<const detail::mat_rm<T>> Xm(x.data(), n, L.in_features);
        Eigen::Map<const detail::mat_rm<T>> dOm(dout.data(), n, L.out_features);
        Eigen::Map<const detail::mat_rm<T>> Wm(Wb.values.data(), L.out_features, L.in_features);
        Eigen::Map<detail::mat_rm<T>> dWm(Wb.grad.data(), L.out_features, L.in_features);
        Eigen::Map<detail::mat_rm<T>> dXm(dx.data(), n, L.in_features);
        dWm.noalias() += dOm.transpose() * Xm;
        for (int j = 0; j < L.out_features; ++j) Bb.grad[j] += dOm.col(j).sum();
        dXm.noalias() += dOm * Wm;
    }

    // --- global average pool ---

    tensor<T> gap_forward(const tensor<T>& x) const {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        tensor<T> out({n, c, 1, 1});
        const double inv = 1.0 / (double(h) * w);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) s += double(x.at4(i, ch, y, xx));
                out.at4(i, ch, 0, 0) = T(s * inv);
            }
        return out;
    }

    static void gap_backward(const tensor<T>& dout, tensor<T>& dx) {
        const int n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
        const T inv = T(1.0 / (double(h) * w));
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T g = dout.at4(i, ch, 0, 0) * inv;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) dx.at4(i, ch, y, xx) += g;
            }
    }

    // --- softmax ---

    tensor<T> softmax_forward(const tensor<T>& x) const {
        const int n = x.dim(0), k = x.dim(1);
        tensor<T> out({n, k});
        for (int i = 0; i < n; ++i) {
            T mx = x.at2(i, 0);
            for (int j = 1; j < k; ++j) mx = std::max(mx, x.at2(i, j));
            double s = 0.0;
            for (int j = 0; j < k; ++j) {
                const double e = std::exp(double(x.at2(i, j) - mx));
                out.at2(i, j) = T(e);
                s += e;
            }
            const T inv = T(1.0 / s);
            for (int j = 0; j < k; ++j) out.at2(i, j) *= inv;
        }
        return out;
    }

    // Backward from the fused softmax + cross-entropy head down to the input.
    double backward(forward_trace<T>& tr, const std::vector<int>& labels) {
        if (layers.empty() || layers.back().kind != layer_kind::softmax)
            throw config_error("network must end with a softmax layer");
        const tensor<T>& probs = tr.act.back();
        const double loss = cross_entropy(probs, labels);

        for (auto& b : blocks_) b.grad.fill(T(0));

        std::vector<tensor<T>> dact(tr.act.size());
        const std::size_t soft = layers.size() - 1;
        const int n = probs.dim(0), k = probs.dim(1);
        tensor<T> dlogits({n, k});
        const T invn = T(1.0 / double(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                dlogits.at2(i, j) = (probs.at2(i, j) - (labels[i] == j ? T(1) : T(0))) * invn;
        dact[layers[soft].in1] = std::move(dlogits);

        for (std::size_t li = soft; li-- > 0;) {
            const layer_spec& L = layers[li];
            tensor<T>& dout = dact[li + 1];
            if (dout.numel() == 0) continue; // no gradient reaches this layer
            auto need = [&](int slot) -> tensor<T>& {
                if (dact[slot].numel() == 0) dact[slot] = tensor<T>(tr.act[slot].shape());
                return dact[slot];
            };
            switch (L.kind) {
            case layer_kind::conv2d:
                conv_backward(L, tr.act[L.in1], dout, need(L.in1));
                break;
            case layer_kind::max_pool:
                pool_backward(dout, tr.aux[li].pool_arg, need(L.in1));
                break;
            case layer_kind::relu: {
                const tensor<T>& x = tr.act[L.in1];
                tensor<T>& dx = need(L.in1);
                for (std::size_t t = 0; t < x.numel(); ++t)
                    if (x[t] > T(0)) dx[t] += dout[t];
                break;
            }
            case layer_kind::batch_norm:
                bn_backward(L, tr.aux[li], dout, need(L.in1));
                break;
            case layer_kind::residual_add: {
                tensor<T>& da = need(L.in1);
                for (std::size_t t = 0; t < dout.numel(); ++t) da[t] += dout[t];
                tensor<T>& db = need(L.in2);
                for (std::size_t t = 0; t < dout.numel(); ++t) db[t] += dout[t];
                break;
            }
            case layer_kind::flatten: {
                tensor<T>& dx = need(L.in1);
                for (std::size_t t = 0; t < dout.numel(); ++t) dx[t] += dout[t];
                break;
            }
            case layer_kind::fully_connected:
                fc_backward(L, tr.act[L.in1], dout, need(L.in1));
                break;
            case layer_kind::global_avg_pool:
                gap_backward(dout, need(L.in1));
                break;
            case layer_kind::softmax:
                throw config_error("softmax must be the final layer");
            }
            dact[li + 1] = tensor<T>(); // free as we go
        }
        return loss;
    }
};

} // namespace colony
