#include "latefuse/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "kernels.hpp"

namespace latefuse {

namespace {

template <typename T>
const BasicTensor<T>& matrix_value(Tape<T>& tape, Var v, const char* what) {
    const auto& t = tape.value(v);
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
    }
    return t;
}

template <typename T>
const BasicTensor<T>& vector_value(Tape<T>& tape, Var v, std::size_t n, const char* what) {
    const auto& t = tape.value(v);
    if (t.rank() != 1 || t.size() != n) {
        throw DimensionError(std::string(what) + " expects a vector of length " + std::to_string(n) +
                             ", got " + shape_string(t.shape()));
    }
    return t;
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const auto& av = matrix_value(tape, a, "matmul");
    const auto& bv = matrix_value(tape, b, "matmul");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) {
        throw DimensionError("matmul " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
    }
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    kernels::gemm_nn(m, k, n, av.raw(), bv.raw(), out.raw());
    return tape.record(OpKind::matmul, std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, Var self) {
        const T* g = t.grad(self).raw();
        if (t.requires_grad(a)) {
            kernels::gemm_nt(m, n, k, g, t.value(b).raw(), t.grad_buffer(a).raw());
        }
        if (t.requires_grad(b)) {
            kernels::gemm_tn(m, k, n, t.value(a).raw(), g, t.grad_buffer(b).raw());
        }
    });
}

template <typename T>
Var matmul_nt(Tape<T>& tape, Var a, Var b) {
    const auto& av = matrix_value(tape, a, "matmul_nt");
    const auto& bv = matrix_value(tape, b, "matmul_nt");
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) {
        throw DimensionError("matmul_nt " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()) + "^T");
    }
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    kernels::gemm_nt(m, k, n, av.raw(), bv.raw(), out.raw());
    return tape.record(OpKind::matmul_nt, std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, Var self) {
        const T* g = t.grad(self).raw();
        if (t.requires_grad(a)) {
            kernels::gemm_nn(m, n, k, g, t.value(b).raw(), t.grad_buffer(a).raw());
        }
        if (t.requires_grad(b)) {
            kernels::gemm_tn(m, n, k, g, t.value(a).raw(), t.grad_buffer(b).raw());
        }
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (!av.same_shape(bv)) {
        throw DimensionError("add " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
    }
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return tape.record(OpKind::add, std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        for (const Var in : {a, b}) {
            if (t.requires_grad(in)) {
                auto& gi = t.grad_buffer(in);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gi[i] += g[i];
                }
            }
        }
    });
}

template <typename T>
Var add_row(Tape<T>& tape, Var x, Var bias) {
    const auto& xv = matrix_value(tape, x, "add_row");
    const std::size_t m = xv.rows(), n = xv.cols();
    const auto& bv = vector_value(tape, bias, n, "add_row");
    BasicTensor<T> out = xv;
    for (std::size_t r = 0; r < m; ++r) {
        T* row = out.raw() + r * n;
        for (std::size_t c = 0; c < n; ++c) {
            row[c] += bv[c];
        }
    }
    return tape.record(OpKind::add_row, std::move(out), {x, bias}, [x, bias, m, n](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(x)) {
            auto& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
        }
        if (t.requires_grad(bias)) {
            auto& gb = t.grad_buffer(bias);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    gb[c] += g[r * n + c];
                }
            }
        }
    });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (!av.same_shape(bv)) {
        throw DimensionError("mul " + shape_string(av.shape()) + " * " + shape_string(bv.shape()));
    }
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return tape.record(OpKind::mul, std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(a)) {
            auto& ga = t.grad_buffer(a);
            const auto& bv2 = t.value(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * bv2[i];
            }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_buffer(b);
            const auto& av2 = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gb[i] += g[i] * av2[i];
            }
        }
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
    BasicTensor<T> out = tape.value(x);
    for (auto& v : out.data()) {
        v *= factor;
    }
    return tape.record(OpKind::scale, std::move(out), {x}, [x, factor](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * factor;
        }
    });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
    constexpr T kC = T(0.7978845608028654);  // sqrt(2 / pi)
    constexpr T kA = T(0.044715);
    const auto& xv = tape.value(x);
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const T v = xv[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
    }
    return tape.record(OpKind::gelu, std::move(out), {x}, [x](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        const auto& xv2 = t.value(x);
        auto& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = xv2[i];
            const T th = std::tanh(kC * (v + kA * v * v * v));
            const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kC * (T(1) + T(3) * kA * v * v);
            gx[i] += g[i] * d;
        }
    });
}

template <typename T>
Var grouped_layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, std::size_t groups, T eps) {
    const auto& xv = matrix_value(tape, x, "layer_norm");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (groups == 0 || n == 0 || n % groups != 0) {
        throw DimensionError("layer_norm: width " + std::to_string(n) + " not divisible into " +
                             std::to_string(groups) + " groups");
    }
    const auto& gv = vector_value(tape, gain, n, "layer_norm gain");
    const auto& bv = vector_value(tape, bias, n, "layer_norm bias");
    const std::size_t w = n / groups;

    auto xhat = std::make_shared<std::vector<T>>(m * n);
    auto inv_std = std::make_shared<std::vector<T>>(m * groups);
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t off = r * n + g * w;
            T mean = 0;
            for (std::size_t c = 0; c < w; ++c) {
                mean += xv[off + c];
            }
            mean /= T(w);
            T var = 0;
            for (std::size_t c = 0; c < w; ++c) {
                const T d = xv[off + c] - mean;
                var += d * d;
            }
            var /= T(w);
            const T inv = T(1) / std::sqrt(var + eps);
            (*inv_std)[r * groups + g] = inv;
            for (std::size_t c = 0; c < w; ++c) {
                const T h = (xv[off + c] - mean) * inv;
                (*xhat)[off + c] = h;
                out[off + c] = h * gv[g * w + c] + bv[g * w + c];
            }
        }
    }
    return tape.record(
        OpKind::layer_norm, std::move(out), {x, gain, bias},
        [x, gain, bias, m, n, groups, w, xhat, inv_std](Tape<T>& t, Var self) {
            const auto& g = t.grad(self);
            const auto& gv2 = t.value(gain);
            if (t.requires_grad(gain) || t.requires_grad(bias)) {
                auto* gg = t.requires_grad(gain) ? &t.grad_buffer(gain) : nullptr;
                auto* gb = t.requires_grad(bias) ? &t.grad_buffer(bias) : nullptr;
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                        if (gg) (*gg)[c] += g[r * n + c] * (*xhat)[r * n + c];
                        if (gb) (*gb)[c] += g[r * n + c];
                    }
                }
            }
            if (!t.requires_grad(x)) {
                return;
            }
            auto& gx = t.grad_buffer(x);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t grp = 0; grp < groups; ++grp) {
                    const std::size_t off = r * n + grp * w;
                    T mean_d = 0, mean_dh = 0;
                    for (std::size_t c = 0; c < w; ++c) {
                        const T d = g[off + c] * gv2[grp * w + c];
                        mean_d += d;
                        mean_dh += d * (*xhat)[off + c];
                    }
                    mean_d /= T(w);
                    mean_dh /= T(w);
                    const T inv = (*inv_std)[r * groups + grp];
                    for (std::size_t c = 0; c < w; ++c) {
                        const T d = g[off + c] * gv2[grp * w + c];
                        gx[off + c] += inv * (d - mean_d - (*xhat)[off + c] * mean_dh);
                    }
                }
            }
        });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, T eps) {
    return grouped_layer_norm(tape, x, gain, bias, 1, eps);
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var x, Mask mask) {
    const auto& xv = matrix_value(tape, x, "softmax_rows");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (mask == Mask::causal && m > n) {
        throw DimensionError("causal softmax needs rows <= cols, got " + shape_string(xv.shape()));
    }
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t limit = mask == Mask::causal ? r + 1 : n;
        if (limit == 0) {
            throw DimensionError("softmax row with no unmasked entries");
        }
        const T* in = xv.raw() + r * n;
        T* o = out.raw() + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < limit; ++c) {
            mx = std::max(mx, in[c]);
        }
        T total = 0;
        for (std::size_t c = 0; c < limit; ++c) {
            o[c] = std::exp(in[c] - mx);
            total += o[c];
        }
        const T inv = T(1) / total;
        for (std::size_t c = 0; c < limit; ++c) {
            o[c] *= inv;
        }
    }
    return tape.record(OpKind::softmax, std::move(out), {x}, [x, m, n](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        const auto& p = t.value(self);
        auto& gx = t.grad_buffer(x);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t off = r * n;
            T dot = 0;
            for (std::size_t c = 0; c < n; ++c) {
                dot += p[off + c] * g[off + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
                gx[off + c] += p[off + c] * (g[off + c] - dot);
            }
        }
    });
}

template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> targets) {
    const auto& lv = matrix_value(tape, logits, "cross_entropy");
    const std::size_t m = lv.rows(), v = lv.cols();
    if (targets.size() != m) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
    }
    if (m == 0) {
        throw DimensionError("cross_entropy over zero positions");
    }
    auto probs = std::make_shared<std::vector<T>>(m * v);
    auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    T total = 0;
    for (std::size_t r = 0; r < m; ++r) {
        const int y = targets[r];
        if (y < 0 || static_cast<std::size_t>(y) >= v) {
            throw IndexError("target id " + std::to_string(y) + " outside vocabulary of " + std::to_string(v));
        }
        const T* row = lv.raw() + r * v;
        T mx = *std::max_element(row, row + v);
        T z = 0;
        for (std::size_t c = 0; c < v; ++c) {
            const T e = std::exp(row[c] - mx);
            (*probs)[r * v + c] = e;
            z += e;
        }
        for (std::size_t c = 0; c < v; ++c) {
            (*probs)[r * v + c] /= z;
        }
        total += (std::log(z) + mx) - row[y];
    }
    BasicTensor<T> out({1}, std::vector<T>{total / T(m)});
    return tape.record(OpKind::cross_entropy, std::move(out), {logits},
                       [logits, m, v, probs, tgt](Tape<T>& t, Var self) {
                           const T g = t.grad(self)[0] / T(m);
                           auto& gl = t.grad_buffer(logits);
                           for (std::size_t r = 0; r < m; ++r) {
                               for (std::size_t c = 0; c < v; ++c) {
                                   gl[r * v + c] += g * (*probs)[r * v + c];
                               }
                               gl[r * v + static_cast<std::size_t>((*tgt)[r])] -= g;
                           }
                       });
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> ids) {
    const auto& tv = matrix_value(tape, table, "embedding");
    const std::size_t vocab = tv.rows(), d = tv.cols();
    BasicTensor<T> out = BasicTensor<T>::matrix(ids.size(), d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw IndexError("token id " + std::to_string(id) + " outside table of " + std::to_string(vocab));
        }
        std::copy_n(tv.raw() + static_cast<std::size_t>(id) * d, d, out.raw() + r * d);
    }
    auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
    return tape.record(OpKind::embedding, std::move(out), {table}, [table, d, idx](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gt = t.grad_buffer(table);
        for (std::size_t r = 0; r < idx->size(); ++r) {
            T* dst = gt.raw() + static_cast<std::size_t>((*idx)[r]) * d;
            const T* src = g.raw() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var x, std::size_t begin, std::size_t width) {
    const auto& xv = matrix_value(tape, x, "slice_cols");
    const std::size_t m = xv.rows(), n = xv.cols();
    if (begin + width > n) {
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + width) +
                             ") of width " + std::to_string(n));
    }
    BasicTensor<T> out = BasicTensor<T>::matrix(m, width);
    for (std::size_t r = 0; r < m; ++r) {
        std::copy_n(xv.raw() + r * n + begin, width, out.raw() + r * width);
    }
    return tape.record(OpKind::slice_cols, std::move(out), {x}, [x, m, n, begin, width](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(x);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                gx[r * n + begin + c] += g[r * width + c];
            }
        }
    });
}

template <typename T>
Var concat_cols(Tape<T>& tape, std::span<const Var> parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols of nothing");
    }
    const std::size_t m = matrix_value(tape, parts[0], "concat_cols").rows();
    std::vector<std::size_t> widths;
    std::size_t n = 0;
    for (const Var p : parts) {
        const auto& pv = matrix_value(tape, p, "concat_cols");
        if (pv.rows() != m) {
            throw DimensionError("concat_cols row mismatch");
        }
        widths.push_back(pv.cols());
        n += pv.cols();
    }
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& pv = tape.value(parts[i]);
        for (std::size_t r = 0; r < m; ++r) {
            std::copy_n(pv.raw() + r * widths[i], widths[i], out.raw() + r * n + off);
        }
        off += widths[i];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(OpKind::concat_cols, std::move(out), inputs,
                       [inputs, widths, m, n](Tape<T>& t, Var self) {
                           const auto& g = t.grad(self);
                           std::size_t offset = 0;
                           for (std::size_t i = 0; i < inputs.size(); ++i) {
                               if (t.requires_grad(inputs[i])) {
                                   auto& gi = t.grad_buffer(inputs[i]);
                                   for (std::size_t r = 0; r < m; ++r) {
                                       for (std::size_t c = 0; c < widths[i]; ++c) {
                                           gi[r * widths[i] + c] += g[r * n + offset + c];
                                       }
                                   }
                               }
                               offset += widths[i];
                           }
                       });
}

template <typename T>
Var kron_mix(Tape<T>& tape, Var x, Var mixer) {
    const auto& xv = matrix_value(tape, x, "kron_mix");
    const auto& wv = matrix_value(tape, mixer, "kron_mix mixer");
    const std::size_t m = xv.rows(), n = xv.cols(), heads = wv.rows();
    if (wv.cols() != heads || heads == 0 || n % heads != 0) {
        throw DimensionError("kron_mix: mixer " + shape_string(wv.shape()) + " incompatible with width " +
                             std::to_string(n));
    }
    const std::size_t dh = n / heads;
    BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t h = 0; h < heads; ++h) {
            T* dst = out.raw() + r * n + h * dh;
            for (std::size_t h2 = 0; h2 < heads; ++h2) {
                const T w = wv(h, h2);
                const T* src = xv.raw() + r * n + h2 * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                    dst[c] += w * src[c];
                }
            }
        }
    }
    return tape.record(OpKind::kron_mix, std::move(out), {x, mixer}, [x, mixer, m, n, heads, dh](Tape<T>& t, Var self) {
        const auto& g = t.grad(self);
        const auto& xv2 = t.value(x);
        const auto& wv2 = t.value(mixer);
        if (t.requires_grad(x)) {
            auto& gx = t.grad_buffer(x);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const T* gsrc = g.raw() + r * n + h * dh;
                    for (std::size_t h2 = 0; h2 < heads; ++h2) {
                        const T w = wv2(h, h2);
                        T* dst = gx.raw() + r * n + h2 * dh;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dst[c] += w * gsrc[c];
                        }
                    }
                }
            }
        }
        if (t.requires_grad(mixer)) {
            auto& gw = t.grad_buffer(mixer);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t h2 = 0; h2 < heads; ++h2) {
                        T acc = 0;
                        for (std::size_t c = 0; c < dh; ++c) {
                            acc += g[r * n + h * dh + c] * xv2[r * n + h2 * dh + c];
                        }
                        gw(h, h2) += acc;
                    }
                }
            }
        }
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
    T total = 0;
    for (const T v : tape.value(x).data()) {
        total += v;
    }
    return tape.record(OpKind::sum, BasicTensor<T>({1}, std::vector<T>{total}), {x}, [x](Tape<T>& t, Var self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad_buffer(x).data()) {
            v += g;
        }
    });
}

template <typename T>
BasicTensor<T> kronecker_lift(const BasicTensor<T>& mixer, std::size_t d_head) {
    const std::size_t heads = mixer.rows();
    if (mixer.cols() != heads) {
        throw DimensionError("kronecker_lift needs a square mixer");
    }
    const std::size_t n = heads * d_head;
    BasicTensor<T> out = BasicTensor<T>::matrix(n, n);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t h2 = 0; h2 < heads; ++h2) {
            for (std::size_t c = 0; c < d_head; ++c) {
                out(h * d_head + c, h2 * d_head + c) = mixer(h, h2);
            }
        }
    }
    return out;
}

#define LATEFUSE_INSTANTIATE_OPS(T)                                                       \
    template Var matmul<T>(Tape<T>&, Var, Var);                                           \
    template Var matmul_nt<T>(Tape<T>&, Var, Var);                                        \
    template Var add<T>(Tape<T>&, Var, Var);                                              \
    template Var add_row<T>(Tape<T>&, Var, Var);                                          \
    template Var mul<T>(Tape<T>&, Var, Var);                                              \
    template Var scale<T>(Tape<T>&, Var, T);                                              \
    template Var gelu<T>(Tape<T>&, Var);                                                  \
    template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                               \
    template Var grouped_layer_norm<T>(Tape<T>&, Var, Var, Var, std::size_t, T);          \
    template Var softmax_rows<T>(Tape<T>&, Var, Mask);                                    \
    template Var cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                   \
    template Var embedding<T>(Tape<T>&, Var, std::span<const int>);                       \
    template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);                  \
    template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                          \
    template Var kron_mix<T>(Tape<T>&, Var, Var);                                         \
    template Var sum<T>(Tape<T>&, Var);                                                   \
    template BasicTensor<T> kronecker_lift<T>(const BasicTensor<T>&, std::size_t);

LATEFUSE_INSTANTIATE_OPS(float)
LATEFUSE_INSTANTIATE_OPS(double)

}  // namespace latefuse
