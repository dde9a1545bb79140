#include "lungnas/ops.hpp"

#include <cmath>
#include <limits>

#include "lungnas/kernels.hpp"

namespace lungnas {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
    }
}

Tensor finish(Tensor out, const char* op) {
    out.check_finite(op);
    return out;
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, Index stride,
              Index padding) {
    require_rank(input, 5, "conv3d input");
    require_rank(weight, 5, "conv3d weight");
    const Index batch = input.dim(0), c_in = input.dim(1), c_out = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != c_in || weight.dim(3) != k || weight.dim(4) != k) {
        throw ShapeError("conv3d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
    }
    if (bias && bias->size() != c_out) throw ShapeError("conv3d: bias length does not match output channels");
    if (stride < 1 || padding < 0) throw ShapeError("conv3d: stride must be >= 1 and padding >= 0");

    kernels::ConvGeometry g{c_in, input.dim(2), input.dim(3), input.dim(4), k, stride, padding};
    if (!g.valid() || g.out_depth() < 1 || g.out_height() < 1 || g.out_width() < 1) {
        throw ShapeError("conv3d: non-positive output extent for input " + shape_string(input.shape()) +
                         " with kernel " + std::to_string(k));
    }
    const Index od_n = g.out_depth(), plane = g.out_plane(), out_vol = od_n * plane;
    const Index in_vol = c_in * g.in_volume();
    const Index rows = g.rows();
    const Index chunk = kernels::depth_chunk(g);

    ConstMatrixMap w(weight.data().data(), c_out, rows);
    const bool direct = kernels::prefer_direct(g, c_out);
    Vector out = direct ? Vector::Zero(batch * c_out * out_vol) : Vector(batch * c_out * out_vol);
    Matrix col;
    for (Index b = 0; b < batch; ++b) {
        MatrixMap y(out.data() + b * c_out * out_vol, c_out, out_vol);
        if (direct) {
            kernels::conv_direct(input.data().data() + b * in_vol, weight.data().data(), g, c_out, y.data());
            if (bias) y.colwise() += bias->data();
            continue;
        }
        for (Index d0 = 0; d0 < od_n; d0 += chunk) {
            const Index d1 = std::min(od_n, d0 + chunk);
            const Index cols = (d1 - d0) * plane;
            col.resize(rows, cols);
            kernels::im2col(input.data().data() + b * in_vol, g, d0, d1, col.data());
            y.middleCols(d0 * plane, cols).noalias() = w * col;
        }
        if (bias) y.colwise() += bias->data();
    }

    std::vector<Tensor> parents{input, weight};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias.has_value();
    return finish(
        Tensor::make_result(
            {batch, c_out, od_n, g.out_height(), g.out_width()}, std::move(out), std::move(parents),
            [g, batch, c_out, rows, chunk, od_n, plane, out_vol, in_vol, has_bias, direct](detail::TensorNode& self) {
                auto& x = *self.parents[0];
                auto& wt = *self.parents[1];
                ConstMatrixMap w(wt.data.data(), c_out, rows);
                Vector dx = x.requires_grad ? Vector::Zero(x.data.size()) : Vector();
                Matrix dw = Matrix::Zero(c_out, rows);
                Vector db = Vector::Zero(c_out);
                Matrix col, dcol;
                for (Index b = 0; b < batch; ++b) {
                    ConstMatrixMap dy(self.grad.data() + b * c_out * out_vol, c_out, out_vol);
                    if (has_bias) db += dy.rowwise().sum();
                    if (direct) {
                        kernels::conv_direct_backward(x.data.data() + b * in_vol, wt.data.data(), dy.data(), g, c_out,
                                                      x.requires_grad ? dx.data() + b * in_vol : nullptr,
                                                      wt.requires_grad ? dw.data() : nullptr);
                        continue;
                    }
                    for (Index d0 = 0; d0 < od_n; d0 += chunk) {
                        const Index d1 = std::min(od_n, d0 + chunk);
                        const Index cols = (d1 - d0) * plane;
                        auto dy_chunk = dy.middleCols(d0 * plane, cols);
                        if (wt.requires_grad) {
                            col.resize(rows, cols);
                            kernels::im2col(x.data.data() + b * in_vol, g, d0, d1, col.data());
                            dw.noalias() += dy_chunk * col.transpose();
                        }
                        if (x.requires_grad) {
                            dcol.noalias() = w.transpose() * dy_chunk;
                            kernels::col2im_add(dcol.data(), g, d0, d1, dx.data() + b * in_vol);
                        }
                    }
                }
                if (x.requires_grad) Tensor::accumulate(x, dx);
                Tensor::accumulate(wt, Eigen::Map<const Vector>(dw.data(), dw.size()));
                if (has_bias) Tensor::accumulate(*self.parents[2], db);
            }),
        "conv3d");
}

Tensor batchnorm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   Mode mode) {
    if (input.rank() < 2) throw ShapeError("batchnorm3d: input needs a channel axis");
    const Index batch = input.dim(0), channels = input.dim(1);
    if (gamma.size() != channels || beta.size() != channels || stats.running_mean.size() != channels) {
        throw ShapeError("batchnorm3d: parameter length does not match " + std::to_string(channels) +
                         " channels");
    }
    if (!(stats.eps > 0.0)) throw std::invalid_argument("batchnorm3d: eps must be positive");
    const Index spatial = input.size() / (batch * channels);
    const Index count = batch * spatial;

    Vector mean(channels), inv_std(channels);
    if (mode == Mode::Train) {
        for (Index c = 0; c < channels; ++c) {
            double sum = 0.0;
            for (Index b = 0; b < batch; ++b) sum += input.data().segment((b * channels + c) * spatial, spatial).sum();
            const double mu = sum / static_cast<double>(count);
            double sq = 0.0;
            for (Index b = 0; b < batch; ++b) {
                sq += (input.data().segment((b * channels + c) * spatial, spatial).array() - mu).square().sum();
            }
            const double var = sq / static_cast<double>(count);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + stats.eps);
            stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu;
            stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * var;
        }
    } else {
        mean = stats.running_mean;
        inv_std = (stats.running_var.array() + stats.eps).rsqrt();
    }

    Vector xhat(input.size());
    Vector out(input.size());
    for (Index b = 0; b < batch; ++b) {
        for (Index c = 0; c < channels; ++c) {
            const Index off = (b * channels + c) * spatial;
            xhat.segment(off, spatial) = (input.data().segment(off, spatial).array() - mean[c]) * inv_std[c];
            out.segment(off, spatial) = xhat.segment(off, spatial).array() * gamma[c] + beta[c];
        }
    }

    const bool train = mode == Mode::Train;
    return finish(
        Tensor::make_result(
            input.shape(), std::move(out), {input, gamma, beta},
            [xhat = std::move(xhat), inv_std, batch, channels, spatial, count, train](detail::TensorNode& self) {
                auto& x = *self.parents[0];
                auto& g = *self.parents[1];
                Vector dgamma = Vector::Zero(channels), dbeta = Vector::Zero(channels);
                for (Index b = 0; b < batch; ++b) {
                    for (Index c = 0; c < channels; ++c) {
                        const Index off = (b * channels + c) * spatial;
                        dbeta[c] += self.grad.segment(off, spatial).sum();
                        dgamma[c] += self.grad.segment(off, spatial).dot(xhat.segment(off, spatial));
                    }
                }
                if (x.requires_grad) {
                    Vector dx(x.data.size());
                    const double n = static_cast<double>(count);
                    for (Index c = 0; c < channels; ++c) {
                        const double scale = g.data[c] * inv_std[c];
                        for (Index b = 0; b < batch; ++b) {
                            const Index off = (b * channels + c) * spatial;
                            if (train) {
                                dx.segment(off, spatial) =
                                    scale * (self.grad.segment(off, spatial).array() - dbeta[c] / n -
                                             xhat.segment(off, spatial).array() * (dgamma[c] / n));
                            } else {
                                dx.segment(off, spatial) = scale * self.grad.segment(off, spatial);
                            }
                        }
                    }
                    Tensor::accumulate(x, dx);
                }
                Tensor::accumulate(g, dgamma);
                Tensor::accumulate(*self.parents[2], dbeta);
            }),
        "batchnorm3d");
}

Tensor relu(const Tensor& input) {
    Vector out = input.data().cwiseMax(0.0);
    return Tensor::make_result(input.shape(), std::move(out), {input}, [](detail::TensorNode& self) {
        auto& x = *self.parents[0];
        Tensor::accumulate(x, (x.data.array() > 0.0).select(self.grad, 0.0));
    });
}

Tensor sigmoid(const Tensor& input) {
    Vector out = (1.0 + (-input.data().array()).exp()).inverse().matrix();
    Vector saved = out;
    return finish(Tensor::make_result(input.shape(), std::move(out), {input},
                                      [y = std::move(saved)](detail::TensorNode& self) {
                                          Tensor::accumulate(*self.parents[0],
                                                             (self.grad.array() * y.array() * (1.0 - y.array())).matrix());
                                      }),
                  "sigmoid");
}

Tensor global_pool3d(const Tensor& input, PoolKind kind) {
    require_rank(input, 5, "global_pool3d");
    const Index planes = input.dim(0) * input.dim(1);
    const Index spatial = input.dim(2) * input.dim(3) * input.dim(4);
    if (spatial < 1) throw ShapeError("global_pool3d: empty spatial extent");
    ConstMatrixMap x(input.data().data(), planes, spatial);
    Vector out(planes);
    std::vector<Index> argmax(kind == PoolKind::Max ? planes : 0);
    for (Index p = 0; p < planes; ++p) {
        if (kind == PoolKind::Avg) {
            out[p] = x.row(p).mean();
        } else {
            Index best = 0;
            out[p] = x.row(p).maxCoeff(&best);
            argmax[p] = best;  // Eigen visits in order and keeps the first maximum
        }
    }
    return Tensor::make_result(
        {input.dim(0), input.dim(1), 1, 1, 1}, std::move(out), {input},
        [kind, planes, spatial, argmax = std::move(argmax)](detail::TensorNode& self) {
            Vector dx = Vector::Zero(planes * spatial);
            for (Index p = 0; p < planes; ++p) {
                if (kind == PoolKind::Avg) {
                    dx.segment(p * spatial, spatial).setConstant(self.grad[p] / static_cast<double>(spatial));
                } else {
                    dx[p * spatial + argmax[p]] = self.grad[p];
                }
            }
            Tensor::accumulate(*self.parents[0], dx);
        });
}

Tensor pool3d(const Tensor& input, PoolKind kind, Index window, Index stride) {
    require_rank(input, 5, "pool3d");
    const Index d = input.dim(2), h = input.dim(3), w = input.dim(4);
    if (window < 1 || stride < 1) throw ShapeError("pool3d: window and stride must be >= 1");
    if (window > d || window > h || window > w) {
        throw ShapeError("pool3d: window " + std::to_string(window) + " exceeds spatial extents " +
                         shape_string(input.shape()));
    }
    const Index od = (d - window) / stride + 1, oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    const Index planes = input.dim(0) * input.dim(1);
    const Index in_vol = d * h * w, out_vol = od * oh * ow;
    Vector out(planes * out_vol);
    std::vector<Index> source(kind == PoolKind::Max ? out.size() : 0);
    const double inv = 1.0 / static_cast<double>(window * window * window);
    for (Index p = 0; p < planes; ++p) {
        const double* x = input.data().data() + p * in_vol;
        for (Index z = 0; z < od; ++z)
            for (Index y = 0; y < oh; ++y)
                for (Index xo = 0; xo < ow; ++xo) {
                    const Index o = p * out_vol + (z * oh + y) * ow + xo;
                    double acc = kind == PoolKind::Max ? -std::numeric_limits<double>::infinity() : 0.0;
                    Index best = 0;
                    for (Index kz = 0; kz < window; ++kz)
                        for (Index ky = 0; ky < window; ++ky)
                            for (Index kx = 0; kx < window; ++kx) {
                                const Index i = ((z * stride + kz) * h + y * stride + ky) * w + xo * stride + kx;
                                if (kind == PoolKind::Max) {
                                    if (x[i] > acc) {
                                        acc = x[i];
                                        best = i;
                                    }
                                } else {
                                    acc += x[i];
                                }
                            }
                    if (kind == PoolKind::Max) {
                        out[o] = acc;
                        source[o] = p * in_vol + best;
                    } else {
                        out[o] = acc * inv;
                    }
                }
    }
    return Tensor::make_result(
        {input.dim(0), input.dim(1), od, oh, ow}, std::move(out), {input},
        [=, source = std::move(source)](detail::TensorNode& self) {
            Vector dx = Vector::Zero(planes * in_vol);
            if (kind == PoolKind::Max) {
                for (Index o = 0; o < static_cast<Index>(source.size()); ++o) dx[source[o]] += self.grad[o];
            } else {
                for (Index p = 0; p < planes; ++p)
                    for (Index z = 0; z < od; ++z)
                        for (Index y = 0; y < oh; ++y)
                            for (Index xo = 0; xo < ow; ++xo) {
                                const double g = self.grad[p * out_vol + (z * oh + y) * ow + xo] * inv;
                                for (Index kz = 0; kz < window; ++kz)
                                    for (Index ky = 0; ky < window; ++ky)
                                        for (Index kx = 0; kx < window; ++kx)
                                            dx[p * in_vol + ((z * stride + kz) * h + y * stride + ky) * w +
                                               xo * stride + kx] += g;
                            }
            }
            Tensor::accumulate(*self.parents[0], dx);
        });
}

Tensor channel_pool(const Tensor& input, PoolKind kind) {
    require_rank(input, 5, "channel_pool");
    const Index batch = input.dim(0), channels = input.dim(1);
    const Index spatial = input.dim(2) * input.dim(3) * input.dim(4);
    Vector out(batch * spatial);
    std::vector<Index> argmax(kind == PoolKind::Max ? out.size() : 0);
    for (Index b = 0; b < batch; ++b) {
        ConstMatrixMap x(input.data().data() + b * channels * spatial, channels, spatial);
        auto dst = out.segment(b * spatial, spatial);
        if (kind == PoolKind::Avg) {
            dst = x.colwise().mean().transpose();
        } else {
            dst = x.row(0).transpose();
            for (Index s = 0; s < spatial; ++s) argmax[b * spatial + s] = 0;
            for (Index c = 1; c < channels; ++c) {
                for (Index s = 0; s < spatial; ++s) {
                    if (x(c, s) > dst[s]) {
                        dst[s] = x(c, s);
                        argmax[b * spatial + s] = c;
                    }
                }
            }
        }
    }
    return Tensor::make_result(
        {batch, 1, input.dim(2), input.dim(3), input.dim(4)}, std::move(out), {input},
        [=, argmax = std::move(argmax)](detail::TensorNode& self) {
            Vector dx = Vector::Zero(batch * channels * spatial);
            for (Index b = 0; b < batch; ++b) {
                MatrixMap g(dx.data() + b * channels * spatial, channels, spatial);
                auto up = self.grad.segment(b * spatial, spatial);
                if (kind == PoolKind::Avg) {
                    g.rowwise() = up.transpose() / static_cast<double>(channels);
                } else {
                    for (Index s = 0; s < spatial; ++s) g(argmax[b * spatial + s], s) = up[s];
                }
            }
            Tensor::accumulate(*self.parents[0], dx);
        });
}

Tensor dense(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
    require_rank(input, 2, "dense input");
    require_rank(weight, 2, "dense weight");
    const Index batch = input.dim(0), in = input.dim(1), out_f = weight.dim(0);
    if (weight.dim(1) != in) {
        throw ShapeError("dense: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(input.shape()));
    }
    if (bias && bias->size() != out_f) throw ShapeError("dense: bias length mismatch");
    ConstMatrixMap x(input.data().data(), batch, in);
    ConstMatrixMap w(weight.data().data(), out_f, in);
    Matrix y = x * w.transpose();
    if (bias) y.rowwise() += bias->data().transpose();
    std::vector<Tensor> parents{input, weight};
    if (bias) parents.push_back(*bias);
    return finish(Tensor::make_result({batch, out_f}, Eigen::Map<Vector>(y.data(), y.size()), std::move(parents),
                                      [batch, in, out_f](detail::TensorNode& self) {
                                          auto& xn = *self.parents[0];
                                          auto& wn = *self.parents[1];
                                          ConstMatrixMap dy(self.grad.data(), batch, out_f);
                                          ConstMatrixMap x(xn.data.data(), batch, in);
                                          ConstMatrixMap w(wn.data.data(), out_f, in);
                                          if (xn.requires_grad) {
                                              Matrix dx = dy * w;
                                              Tensor::accumulate(xn, Eigen::Map<Vector>(dx.data(), dx.size()));
                                          }
                                          Matrix dw = dy.transpose() * x;
                                          Tensor::accumulate(wn, Eigen::Map<Vector>(dw.data(), dw.size()));
                                          if (self.parents.size() > 2) {
                                              Tensor::accumulate(*self.parents[2], dy.colwise().sum().transpose());
                                          }
                                      }),
                  "dense");
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
    }
    return Tensor::make_result(a.shape(), a.data() + b.data(), {a, b}, [](detail::TensorNode& self) {
        Tensor::accumulate(*self.parents[0], self.grad);
        Tensor::accumulate(*self.parents[1], self.grad);
    });
}

Tensor mul_broadcast(const Tensor& input, const Tensor& gate) {
    require_rank(input, 5, "mul_broadcast input");
    require_rank(gate, 5, "mul_broadcast gate");
    std::array<Index, 5> in_ext{}, gate_ext{}, gate_stride{};
    for (std::size_t a = 0; a < 5; ++a) {
        in_ext[a] = input.dim(a);
        gate_ext[a] = gate.dim(a);
        if (gate_ext[a] != in_ext[a] && gate_ext[a] != 1) {
            throw ShapeError("mul_broadcast: gate " + shape_string(gate.shape()) + " does not broadcast to " +
                             shape_string(input.shape()));
        }
    }
    Index s = 1;
    for (int a = 4; a >= 0; --a) {
        gate_stride[a] = gate_ext[a] == 1 ? 0 : s;
        s *= gate_ext[a];
    }
    // Precompute the gate index of every input element.
    std::vector<Index> gidx(static_cast<std::size_t>(input.size()));
    {
        Index i = 0;
        for (Index b = 0; b < in_ext[0]; ++b)
            for (Index c = 0; c < in_ext[1]; ++c)
                for (Index z = 0; z < in_ext[2]; ++z)
                    for (Index y = 0; y < in_ext[3]; ++y) {
                        const Index base =
                            b * gate_stride[0] + c * gate_stride[1] + z * gate_stride[2] + y * gate_stride[3];
                        for (Index x = 0; x < in_ext[4]; ++x) gidx[i++] = base + x * gate_stride[4];
                    }
    }
    Vector out(input.size());
    for (Index i = 0; i < input.size(); ++i) out[i] = input[i] * gate[gidx[i]];
    return Tensor::make_result(input.shape(), std::move(out), {input, gate},
                               [gidx = std::move(gidx)](detail::TensorNode& self) {
                                   auto& x = *self.parents[0];
                                   auto& g = *self.parents[1];
                                   const Index n = x.data.size();
                                   if (x.requires_grad) {
                                       Vector dx(n);
                                       for (Index i = 0; i < n; ++i) dx[i] = self.grad[i] * g.data[gidx[i]];
                                       Tensor::accumulate(x, dx);
                                   }
                                   if (g.requires_grad) {
                                       Vector dg = Vector::Zero(g.data.size());
                                       for (Index i = 0; i < n; ++i) dg[gidx[i]] += self.grad[i] * x.data[i];
                                       Tensor::accumulate(g, dg);
                                   }
                               });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 5, "concat_channels");
    require_rank(b, 5, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3) || a.dim(4) != b.dim(4)) {
        throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    const Index batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const Index spatial = a.dim(2) * a.dim(3) * a.dim(4);
    Vector out(batch * (ca + cb) * spatial);
    for (Index n = 0; n < batch; ++n) {
        out.segment(n * (ca + cb) * spatial, ca * spatial) = a.data().segment(n * ca * spatial, ca * spatial);
        out.segment((n * (ca + cb) + ca) * spatial, cb * spatial) = b.data().segment(n * cb * spatial, cb * spatial);
    }
    return Tensor::make_result({batch, ca + cb, a.dim(2), a.dim(3), a.dim(4)}, std::move(out), {a, b},
                               [batch, ca, cb, spatial](detail::TensorNode& self) {
                                   Vector da(batch * ca * spatial), db(batch * cb * spatial);
                                   for (Index n = 0; n < batch; ++n) {
                                       da.segment(n * ca * spatial, ca * spatial) =
                                           self.grad.segment(n * (ca + cb) * spatial, ca * spatial);
                                       db.segment(n * cb * spatial, cb * spatial) =
                                           self.grad.segment((n * (ca + cb) + ca) * spatial, cb * spatial);
                                   }
                                   Tensor::accumulate(*self.parents[0], da);
                                   Tensor::accumulate(*self.parents[1], db);
                               });
}

Tensor flatten(const Tensor& input) {
    if (input.rank() < 1) throw ShapeError("flatten: scalar input");
    return input.reshape({input.dim(0), input.size() / std::max<Index>(input.dim(0), 1)});
}

}  // namespace lungnas
