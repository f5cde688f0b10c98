#include "neurosleep/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "neurosleep/kernels.hpp"

namespace nsn {

namespace {

using std::size_t;
using ssize = std::ptrdiff_t;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void ConvSpec::validate(std::size_t in_h, std::size_t in_w) const {
    require(num_filters > 0, "conv2d: num_filters must be positive");
    require(stride_h > 0 && stride_w > 0, "conv2d: strides must be positive");
    require(in_h + pad_top + pad_bottom >= kernel_h,
            "conv2d: padded height " + std::to_string(in_h + pad_top + pad_bottom) +
                " smaller than kernel height " + std::to_string(kernel_h));
    require(in_w + pad_left + pad_right >= kernel_w,
            "conv2d: padded width " + std::to_string(in_w + pad_left + pad_right) +
                " smaller than kernel width " + std::to_string(kernel_w));
}

Var conv2d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias) {
    const Tensor& x = input->value;
    const Tensor& w = weights->value;
    const Tensor& b = bias->value;
    require(x.rank() == 3, "conv2d: input must be rank 3, got " + Tensor::shape_str(x.shape()));
    require(w.rank() == 4, "conv2d: weights must be rank 4, got " + Tensor::shape_str(w.shape()));
    const size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    spec.validate(H, W);
    require(w.dim(0) == spec.num_filters,
            "conv2d: weights dim 0 (" + std::to_string(w.dim(0)) + ") != num_filters (" +
                std::to_string(spec.num_filters) + ")");
    require(w.dim(1) == cin, "conv2d: weights dim 1 (" + std::to_string(w.dim(1)) +
                                 ") != input channels (" + std::to_string(cin) + ")");
    require(w.dim(2) == spec.kernel_h && w.dim(3) == spec.kernel_w,
            "conv2d: weights kernel dims " + Tensor::shape_str({w.dim(2), w.dim(3)}) +
                " != spec kernel " + Tensor::shape_str({spec.kernel_h, spec.kernel_w}));
    require(b.rank() == 1 && b.dim(0) == spec.num_filters,
            "conv2d: bias must be [" + std::to_string(spec.num_filters) + "], got " +
                Tensor::shape_str(b.shape()));

    const size_t F = spec.num_filters, kh = spec.kernel_h, kw = spec.kernel_w;
    const size_t Ho = spec.out_h(H), Wo = spec.out_w(W);

    Tensor out({F, Ho, Wo});
    for (size_t f = 0; f < F; ++f) {
        double* of = out.data() + f * Ho * Wo;
        std::fill(of, of + Ho * Wo, b[f]);
        for (size_t c = 0; c < cin; ++c) {
            for (size_t ki = 0; ki < kh; ++ki) {
                const double* wr = w.data() + ((f * cin + c) * kh + ki) * kw;
                for (size_t oh = 0; oh < Ho; ++oh) {
                    const ssize ih = ssize(oh * spec.stride_h + ki) - ssize(spec.pad_top);
                    if (ih < 0 || ih >= ssize(H)) continue;
                    const double* xr = x.data() + (c * H + size_t(ih)) * W;
                    double* orow = of + oh * Wo;
                    if (spec.stride_w == 1) {
                        for (size_t ow = 0; ow < Wo; ++ow) {
                            const ssize start = ssize(ow) - ssize(spec.pad_left);
                            const size_t j0 = size_t(std::max<ssize>(0, -start));
                            const size_t j1 = size_t(std::min<ssize>(ssize(kw), ssize(W) - start));
                            if (j1 > j0)
                                orow[ow] += kernels::dot(wr + j0, xr + start + ssize(j0), j1 - j0);
                        }
                    } else {
                        for (size_t ow = 0; ow < Wo; ++ow) {
                            double acc = 0.0;
                            for (size_t kj = 0; kj < kw; ++kj) {
                                const ssize iw =
                                    ssize(ow * spec.stride_w + kj) - ssize(spec.pad_left);
                                if (iw >= 0 && iw < ssize(W)) acc += wr[kj] * xr[iw];
                            }
                            orow[ow] += acc;
                        }
                    }
                }
            }
        }
    }

    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {input, weights, bias};
    node->backprop = [spec](Node& n) {
        const Tensor& x = n.parents[0]->value;
        const Tensor& w = n.parents[1]->value;
        Tensor& gx = n.parents[0]->grad;
        Tensor& gw = n.parents[1]->grad;
        Tensor& gb = n.parents[2]->grad;
        const Tensor& go = n.grad;
        const size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
        const size_t F = spec.num_filters, kh = spec.kernel_h, kw = spec.kernel_w;
        const size_t Ho = go.dim(1), Wo = go.dim(2);

        for (size_t f = 0; f < F; ++f) {
            const double* gof = go.data() + f * Ho * Wo;
            gb[f] += kernels::sum(gof, Ho * Wo);
            for (size_t c = 0; c < cin; ++c) {
                for (size_t ki = 0; ki < kh; ++ki) {
                    const double* wr = w.data() + ((f * cin + c) * kh + ki) * kw;
                    double* gwr = gw.data() + ((f * cin + c) * kh + ki) * kw;
                    for (size_t oh = 0; oh < Ho; ++oh) {
                        const ssize ih = ssize(oh * spec.stride_h + ki) - ssize(spec.pad_top);
                        if (ih < 0 || ih >= ssize(H)) continue;
                        const double* xr = x.data() + (c * H + size_t(ih)) * W;
                        double* gxr = gx.data() + (c * H + size_t(ih)) * W;
                        const double* gorow = gof + oh * Wo;
                        if (spec.stride_w == 1) {
                            for (size_t kj = 0; kj < kw; ++kj) {
                                const ssize off = ssize(kj) - ssize(spec.pad_left);
                                const size_t o0 = size_t(std::max<ssize>(0, -off));
                                const size_t o1 =
                                    size_t(std::max<ssize>(0, std::min<ssize>(ssize(Wo), ssize(W) - off)));
                                if (o1 > o0) {
                                    gwr[kj] += kernels::dot(gorow + o0, xr + ssize(o0) + off, o1 - o0);
                                    kernels::axpy(wr[kj], gorow + o0, gxr + ssize(o0) + off, o1 - o0);
                                }
                            }
                        } else {
                            for (size_t ow = 0; ow < Wo; ++ow) {
                                for (size_t kj = 0; kj < kw; ++kj) {
                                    const ssize iw =
                                        ssize(ow * spec.stride_w + kj) - ssize(spec.pad_left);
                                    if (iw >= 0 && iw < ssize(W)) {
                                        gwr[kj] += gorow[ow] * xr[iw];
                                        gxr[iw] += wr[kj] * gorow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return node;
}

Var maxpool2d(const Var& input, std::size_t r) {
    const Tensor& x = input->value;
    require(x.rank() == 3, "maxpool2d: input must be rank 3");
    require(r >= 1, "maxpool2d: window must be >= 1");
    const size_t F = x.dim(0), H = x.dim(1), W = x.dim(2);
    require(r <= W, "maxpool2d: window " + std::to_string(r) + " exceeds width " +
                        std::to_string(W));
    const size_t Wo = W / r;

    Tensor out({F, H, Wo});
    auto argmax = std::make_shared<std::vector<uint32_t>>(F * H * Wo);
    for (size_t f = 0; f < F; ++f)
        for (size_t h = 0; h < H; ++h) {
            const double* xr = x.data() + (f * H + h) * W;
            double* orow = out.data() + (f * H + h) * Wo;
            uint32_t* arow = argmax->data() + (f * H + h) * Wo;
            for (size_t ow = 0; ow < Wo; ++ow) {
                const size_t base = ow * r;
                double m = xr[base];
                size_t mi = base;
                for (size_t j = 1; j < r; ++j)
                    if (xr[base + j] > m) {  // first occurrence wins ties
                        m = xr[base + j];
                        mi = base + j;
                    }
                orow[ow] = m;
                arow[ow] = uint32_t(mi);
            }
        }

    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {input};
    node->backprop = [argmax, W](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        const Tensor& go = n.grad;
        const size_t F = go.dim(0), H = go.dim(1), Wo = go.dim(2);
        for (size_t f = 0; f < F; ++f)
            for (size_t h = 0; h < H; ++h) {
                const double* gorow = go.data() + (f * H + h) * Wo;
                const uint32_t* arow = argmax->data() + (f * H + h) * Wo;
                double* gxr = gx.data() + (f * H + h) * W;
                for (size_t ow = 0; ow < Wo; ++ow) gxr[arow[ow]] += gorow[ow];
            }
    };
    return node;
}

Var relu(const Var& x) {
    Tensor out(x->value.shape());
    kernels::relu(x->value.data(), out.data(), out.size());
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [](Node& n) {
        const Tensor& xin = n.parents[0]->value;
        Tensor& gx = n.parents[0]->grad;
        for (size_t i = 0; i < xin.size(); ++i)
            if (xin[i] > 0.0) gx[i] += n.grad[i];
    };
    return node;
}

Var softmax(const Var& x) {
    const Tensor& in = x->value;
    require(in.rank() >= 1, "softmax: rank must be >= 1");
    const size_t Y = in.shape().back();
    const size_t rows = in.size() / Y;
    Tensor out(in.shape());
    for (size_t s = 0; s < rows; ++s) {
        const double* xr = in.data() + s * Y;
        double* yr = out.data() + s * Y;
        const double m = kernels::max(xr, Y);
        double z = 0.0;
        for (size_t j = 0; j < Y; ++j) {
            yr[j] = std::exp(xr[j] - m);
            z += yr[j];
        }
        kernels::scale(1.0 / z, yr, Y);
    }
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [Y](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        const size_t rows = n.value.size() / Y;
        for (size_t s = 0; s < rows; ++s) {
            const double* yr = n.value.data() + s * Y;
            const double* gor = n.grad.data() + s * Y;
            const double dotv = kernels::dot(gor, yr, Y);
            for (size_t j = 0; j < Y; ++j) gx[s * Y + j] += yr[j] * (gor[j] - dotv);
        }
    };
    return node;
}

Var layer_norm(const Var& x, const Var& gain, const Var& offset, double eps) {
    const Tensor& in = x->value;
    require(in.rank() == 2, "layer_norm: input must be [S,D]");
    const size_t S = in.dim(0), D = in.dim(1);
    require(gain->value.size() == D && offset->value.size() == D,
            "layer_norm: gain/offset must be [D]");

    Tensor out({S, D});
    auto xhat = std::make_shared<Tensor>(std::vector<size_t>{S, D});
    auto inv_std = std::make_shared<std::vector<double>>(S);
    const double* g = gain->value.data();
    const double* o = offset->value.data();
    for (size_t s = 0; s < S; ++s) {
        const double* xr = in.data() + s * D;
        const double mean = kernels::sum(xr, D) / double(D);
        double var = 0.0;
        for (size_t j = 0; j < D; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= double(D);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[s] = is;
        double* hr = xhat->data() + s * D;
        double* yr = out.data() + s * D;
        for (size_t j = 0; j < D; ++j) {
            hr[j] = (xr[j] - mean) * is;
            yr[j] = g[j] * hr[j] + o[j];
        }
    }

    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x, gain, offset};
    node->backprop = [xhat, inv_std](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        Tensor& gg = n.parents[1]->grad;
        Tensor& go_param = n.parents[2]->grad;
        const double* g = n.parents[1]->value.data();
        const size_t S = n.value.dim(0), D = n.value.dim(1);
        std::vector<double> dxhat(D);
        for (size_t s = 0; s < S; ++s) {
            const double* gor = n.grad.data() + s * D;
            const double* hr = xhat->data() + s * D;
            double sum_dx = 0.0, sum_dxh = 0.0;
            for (size_t j = 0; j < D; ++j) {
                gg[j] += gor[j] * hr[j];
                go_param[j] += gor[j];
                dxhat[j] = gor[j] * g[j];
                sum_dx += dxhat[j];
                sum_dxh += dxhat[j] * hr[j];
            }
            const double is = (*inv_std)[s];
            for (size_t j = 0; j < D; ++j)
                gx[s * D + j] +=
                    is * (dxhat[j] - (sum_dx + hr[j] * sum_dxh) / double(D));
        }
    };
    return node;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xin = x->value;
    const Tensor& win = w->value;
    require(xin.rank() == 2, "linear: input must be [S,Din], got " +
                                 Tensor::shape_str(xin.shape()));
    require(win.rank() == 2, "linear: weights must be [Din,Dout]");
    const size_t S = xin.dim(0), Din = xin.dim(1), Dout = win.dim(1);
    require(win.dim(0) == Din, "linear: weights dim 0 (" + std::to_string(win.dim(0)) +
                                   ") != input features (" + std::to_string(Din) + ")");
    require(b->value.size() == Dout, "linear: bias must be [Dout]");

    Tensor out({S, Dout});
    for (size_t s = 0; s < S; ++s) {
        double* orow = out.data() + s * Dout;
        std::copy(b->value.data(), b->value.data() + Dout, orow);
        const double* xr = xin.data() + s * Din;
        for (size_t k = 0; k < Din; ++k)
            kernels::axpy(xr[k], win.data() + k * Dout, orow, Dout);
    }

    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x, w, b};
    node->backprop = [](Node& n) {
        const Tensor& xin = n.parents[0]->value;
        const Tensor& win = n.parents[1]->value;
        Tensor& gx = n.parents[0]->grad;
        Tensor& gw = n.parents[1]->grad;
        Tensor& gb = n.parents[2]->grad;
        const size_t S = xin.dim(0), Din = xin.dim(1), Dout = win.dim(1);
        for (size_t s = 0; s < S; ++s) {
            const double* gor = n.grad.data() + s * Dout;
            const double* xr = xin.data() + s * Din;
            kernels::add(gb.data(), gor, gb.data(), Dout);
            for (size_t k = 0; k < Din; ++k) {
                gx[s * Din + k] += kernels::dot(gor, win.data() + k * Dout, Dout);
                kernels::axpy(xr[k], gor, gw.data() + k * Dout, Dout);
            }
        }
    };
    return node;
}

Var dropout(const Var& x, double p, bool train, std::mt19937_64& rng) {
    require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got " + std::to_string(p));
    if (!train || p == 0.0) {
        // Identity pass-through node keeps graph structure uniform.
        auto node = std::make_shared<Node>(x->value);
        node->parents = {x};
        node->backprop = [](Node& n) {
            kernels::add(n.parents[0]->grad.data(), n.grad.data(), n.parents[0]->grad.data(),
                         n.grad.size());
        };
        return node;
    }
    const double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(x->value.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor out(x->value.shape());
    for (size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = u(rng) < p ? 0.0 : 1.0 / keep;
        out[i] = x->value[i] * (*mask)[i];
    }
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [mask](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * (*mask)[i];
    };
    return node;
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
            "matmul: incompatible shapes " + Tensor::shape_str(A.shape()) + " x " +
                Tensor::shape_str(B.shape()));
    const size_t S = A.dim(0), K = A.dim(1), E = B.dim(1);
    Tensor out({S, E});
    for (size_t s = 0; s < S; ++s) {
        double* orow = out.data() + s * E;
        const double* ar = A.data() + s * K;
        for (size_t k = 0; k < K; ++k) kernels::axpy(ar[k], B.data() + k * E, orow, E);
    }
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {a, b};
    node->backprop = [](Node& n) {
        const Tensor& A = n.parents[0]->value;
        const Tensor& B = n.parents[1]->value;
        Tensor& gA = n.parents[0]->grad;
        Tensor& gB = n.parents[1]->grad;
        const size_t S = A.dim(0), K = A.dim(1), E = B.dim(1);
        for (size_t s = 0; s < S; ++s) {
            const double* gor = n.grad.data() + s * E;
            const double* ar = A.data() + s * K;
            for (size_t k = 0; k < K; ++k) {
                gA[s * K + k] += kernels::dot(gor, B.data() + k * E, E);
                kernels::axpy(ar[k], gor, gB.data() + k * E, E);
            }
        }
    };
    return node;
}

Var matmul_transb(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(1),
            "matmul_transb: incompatible shapes " + Tensor::shape_str(A.shape()) + " x " +
                Tensor::shape_str(B.shape()) + "^T");
    const size_t S = A.dim(0), K = A.dim(1), E = B.dim(0);
    Tensor out({S, E});
    for (size_t s = 0; s < S; ++s)
        for (size_t e = 0; e < E; ++e)
            out[s * E + e] = kernels::dot(A.data() + s * K, B.data() + e * K, K);
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {a, b};
    node->backprop = [](Node& n) {
        const Tensor& A = n.parents[0]->value;
        const Tensor& B = n.parents[1]->value;
        Tensor& gA = n.parents[0]->grad;
        Tensor& gB = n.parents[1]->grad;
        const size_t S = A.dim(0), K = A.dim(1), E = B.dim(0);
        for (size_t s = 0; s < S; ++s) {
            const double* gor = n.grad.data() + s * E;
            for (size_t e = 0; e < E; ++e) {
                kernels::axpy(gor[e], B.data() + e * K, gA.data() + s * K, K);
                kernels::axpy(gor[e], A.data() + s * K, gB.data() + e * K, K);
            }
        }
    };
    return node;
}

Var add(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value),
            "add: shape mismatch " + Tensor::shape_str(a->value.shape()) + " vs " +
                Tensor::shape_str(b->value.shape()));
    Tensor out(a->value.shape());
    kernels::add(a->value.data(), b->value.data(), out.data(), out.size());
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {a, b};
    node->backprop = [](Node& n) {
        kernels::add(n.parents[0]->grad.data(), n.grad.data(), n.parents[0]->grad.data(),
                     n.grad.size());
        kernels::add(n.parents[1]->grad.data(), n.grad.data(), n.parents[1]->grad.data(),
                     n.grad.size());
    };
    return node;
}

Var scale(const Var& x, double alpha) {
    Tensor out = x->value;
    kernels::scale(alpha, out.data(), out.size());
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [alpha](Node& n) {
        kernels::axpy(alpha, n.grad.data(), n.parents[0]->grad.data(), n.grad.size());
    };
    return node;
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    require(Tensor::count(shape) == x->value.size(),
            "reshape: element count mismatch, " + Tensor::shape_str(x->value.shape()) +
                " -> " + Tensor::shape_str(shape));
    Tensor out(std::move(shape), x->value.vec());
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [](Node& n) {
        kernels::add(n.parents[0]->grad.data(), n.grad.data(), n.parents[0]->grad.data(),
                     n.grad.size());
    };
    return node;
}

Var transpose2d(const Var& x) {
    const Tensor& in = x->value;
    require(in.rank() == 2, "transpose2d: input must be rank 2");
    const size_t A = in.dim(0), B = in.dim(1);
    Tensor out({B, A});
    for (size_t i = 0; i < A; ++i)
        for (size_t j = 0; j < B; ++j) out[j * A + i] = in[i * B + j];
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [A, B](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        for (size_t i = 0; i < A; ++i)
            for (size_t j = 0; j < B; ++j) gx[i * B + j] += n.grad[j * A + i];
    };
    return node;
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
    const Tensor& in = x->value;
    require(in.rank() == 2 && c0 < c1 && c1 <= in.dim(1), "slice_cols: bad column range");
    const size_t S = in.dim(0), D = in.dim(1), Dc = c1 - c0;
    Tensor out({S, Dc});
    for (size_t s = 0; s < S; ++s)
        std::copy(in.data() + s * D + c0, in.data() + s * D + c1, out.data() + s * Dc);
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [c0, D, Dc](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        const size_t S = n.value.dim(0);
        for (size_t s = 0; s < S; ++s)
            kernels::add(gx.data() + s * D + c0, n.grad.data() + s * Dc,
                         gx.data() + s * D + c0, Dc);
    };
    return node;
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    const size_t S = parts[0]->value.dim(0);
    size_t D = 0;
    for (const auto& p : parts) {
        require(p->value.rank() == 2 && p->value.dim(0) == S, "concat_cols: row mismatch");
        D += p->value.dim(1);
    }
    Tensor out({S, D});
    size_t col = 0;
    for (const auto& p : parts) {
        const size_t Dp = p->value.dim(1);
        for (size_t s = 0; s < S; ++s)
            std::copy(p->value.data() + s * Dp, p->value.data() + (s + 1) * Dp,
                      out.data() + s * D + col);
        col += Dp;
    }
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = parts;
    node->backprop = [D](Node& n) {
        const size_t S = n.value.dim(0);
        size_t col = 0;
        for (auto& p : n.parents) {
            const size_t Dp = p->value.dim(1);
            for (size_t s = 0; s < S; ++s)
                kernels::add(p->grad.data() + s * Dp, n.grad.data() + s * D + col,
                             p->grad.data() + s * Dp, Dp);
            col += Dp;
        }
    };
    return node;
}

Var concat_axis0(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_axis0: empty input");
    std::vector<size_t> tail(parts[0]->value.shape().begin() + 1, parts[0]->value.shape().end());
    size_t rows = 0;
    for (const auto& p : parts) {
        std::vector<size_t> t(p->value.shape().begin() + 1, p->value.shape().end());
        require(t == tail, "concat_axis0: trailing dims mismatch");
        rows += p->value.dim(0);
    }
    std::vector<size_t> shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    Tensor out(shape);
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + off);
        off += p->value.size();
    }
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = parts;
    node->backprop = [](Node& n) {
        size_t off = 0;
        for (auto& p : n.parents) {
            kernels::add(p->grad.data(), n.grad.data() + off, p->grad.data(), p->grad.size());
            off += p->grad.size();
        }
    };
    return node;
}

Var mean_over_rows(const Var& x) {
    const Tensor& in = x->value;
    require(in.rank() == 2 && in.dim(0) >= 1, "mean_over_rows: input must be [S,D], S >= 1");
    const size_t S = in.dim(0), D = in.dim(1);
    Tensor out({D});
    for (size_t s = 0; s < S; ++s) kernels::add(out.data(), in.data() + s * D, out.data(), D);
    kernels::scale(1.0 / double(S), out.data(), D);
    auto node = std::make_shared<Node>(std::move(out));
    node->parents = {x};
    node->backprop = [S, D](Node& n) {
        Tensor& gx = n.parents[0]->grad;
        for (size_t s = 0; s < S; ++s)
            kernels::axpy(1.0 / double(S), n.grad.data(), gx.data() + s * D, D);
    };
    return node;
}

Var multi_head_self_attention(const Var& x, std::size_t heads, const Var& wq, const Var& bq,
                              const Var& wk, const Var& bk, const Var& wv, const Var& bv,
                              const Var& wo, const Var& bo) {
    const size_t D = x->value.dim(1);
    require(heads >= 1 && D % heads == 0,
            "multi_head_self_attention: embedding dim " + std::to_string(D) +
                " not divisible by head count " + std::to_string(heads));
    const size_t dk = D / heads;
    const double att_scale = 1.0 / std::sqrt(double(dk));

    Var q = linear(x, wq, bq);
    Var k = linear(x, wk, bk);
    Var v = linear(x, wv, bv);

    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * dk, (h + 1) * dk);
        Var kh = slice_cols(k, h * dk, (h + 1) * dk);
        Var vh = slice_cols(v, h * dk, (h + 1) * dk);
        Var attn = softmax(scale(matmul_transb(qh, kh), att_scale));
        head_outs.push_back(matmul(attn, vh));
    }
    return linear(concat_cols(head_outs), wo, bo);
}

Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& labels,
                           const std::vector<double>& class_weights, Reduction reduction) {
    const Tensor& in = logits->value;
    require(in.rank() == 2, "weighted_cross_entropy: logits must be [n,Y]");
    const size_t n = in.dim(0), Y = in.dim(1);
    require(labels.size() == n, "weighted_cross_entropy: labels size (" +
                                    std::to_string(labels.size()) + ") != batch (" +
                                    std::to_string(n) + ")");
    require(class_weights.size() == Y, "weighted_cross_entropy: weights size != class count");
    for (size_t i = 0; i < n; ++i)
        require(labels[i] < Y, "weighted_cross_entropy: label out of range at sample " +
                                   std::to_string(i));

    auto probs = std::make_shared<Tensor>(std::vector<size_t>{n, Y});
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double* lr = in.data() + i * Y;
        double* pr = probs->data() + i * Y;
        const double m = kernels::max(lr, Y);
        double z = 0.0;
        for (size_t j = 0; j < Y; ++j) {
            pr[j] = std::exp(lr[j] - m);
            z += pr[j];
        }
        kernels::scale(1.0 / z, pr, Y);
        const double lse = m + std::log(z);
        loss += class_weights[labels[i]] * (lse - lr[labels[i]]);
    }
    const double norm = reduction == Reduction::Mean ? 1.0 / double(n) : 1.0;
    auto node = std::make_shared<Node>(Tensor::scalar(loss * norm));
    node->parents = {logits};
    auto lbl = std::make_shared<std::vector<size_t>>(labels);
    auto wts = std::make_shared<std::vector<double>>(class_weights);
    node->backprop = [probs, lbl, wts, norm, Y](Node& nd) {
        Tensor& gx = nd.parents[0]->grad;
        const double g = nd.grad[0] * norm;
        const size_t n = probs->dim(0);
        for (size_t i = 0; i < n; ++i) {
            const double wi = (*wts)[(*lbl)[i]] * g;
            const double* pr = probs->data() + i * Y;
            for (size_t j = 0; j < Y; ++j) gx[i * Y + j] += wi * pr[j];
            gx[i * Y + (*lbl)[i]] -= wi;
        }
    };
    return node;
}

double grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& points, double eps) {
    std::vector<Var> leaves;
    leaves.reserve(points.size());
    for (const auto& t : points) leaves.push_back(make_leaf(t));
    Var out = f(leaves);
    backward(out);

    auto eval = [&](const std::vector<Tensor>& pts) {
        std::vector<Var> ls;
        ls.reserve(pts.size());
        for (const auto& t : pts) ls.push_back(make_leaf(t));
        return f(ls)->value[0];
    };

    double max_err = 0.0;
    std::vector<Tensor> work = points;
    for (size_t t = 0; t < points.size(); ++t) {
        for (size_t i = 0; i < points[t].size(); ++i) {
            const double orig = work[t][i];
            work[t][i] = orig + eps;
            const double fp = eval(work);
            work[t][i] = orig - eps;
            const double fm = eval(work);
            work[t][i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = leaves[t]->grad[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            max_err = std::max(max_err, std::abs(analytic - numeric) / denom);
        }
    }
    return max_err;
}

}  // namespace nsn
