#include "rtatl/nn_ops.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols[(c*kh+i)*kw+j, oy*ow+ox] = img[c, oy*s-p+i, ox*s-p+j], zero outside.
void im2col(const double* img, int C, int H, int W, int k, int stride, int pad, int oh, int ow,
            double* cols) {
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                double* row = cols + (static_cast<size_t>(c) * k * k + i * k + j) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride - pad + i;
                    if (y < 0 || y >= H) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = 0.0;
                        continue;
                    }
                    const double* src = img + (static_cast<size_t>(c) * H + y) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * stride - pad + j;
                        row[oy * ow + ox] = (x < 0 || x >= W) ? 0.0 : src[x];
                    }
                }
            }
        }
    }
}

// Scatter-add transpose of im2col.
void col2im_add(const double* cols, int C, int H, int W, int k, int stride, int pad, int oh, int ow,
                double* img) {
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                const double* row = cols + (static_cast<size_t>(c) * k * k + i * k + j) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * stride - pad + i;
                    if (y < 0 || y >= H) continue;
                    double* dst = img + (static_cast<size_t>(c) * H + y) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * stride - pad + j;
                        if (x >= 0 && x < W) dst[x] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.val().ndim() != 4 || w.val().ndim() != 4)
        throw ShapeError("conv2d: need x[B,C,H,W], w[Co,Ci,k,k]");
    const int B = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Co = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != Ci)
        throw ShapeError("conv2d: channel mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
    const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");
    const int ckk = Ci * k * k;
    const bool has_bias = b.defined();

    Tensor out(Shape{B, Co, oh, ow});
    auto cols = std::make_shared<std::vector<Tensor>>();
    cols->reserve(B);
    for (int n = 0; n < B; ++n) {
        Tensor col(Shape{ckk, oh * ow});
        im2col(x.val().data() + static_cast<size_t>(n) * Ci * H * W, Ci, H, W, k, stride, pad, oh, ow,
               col.data());
        CMap Wm(w.val().data(), Co, ckk);
        CMap Cm(col.data(), ckk, oh * ow);
        MMap Om(out.data() + static_cast<size_t>(n) * Co * oh * ow, Co, oh * ow);
        Om.noalias() = Wm * Cm;
        if (has_bias) {
            for (int co = 0; co < Co; ++co) {
                double* p = out.data() + (static_cast<size_t>(n) * Co + co) * oh * ow;
                const double bv = b.val().at(co);
                for (int i = 0; i < oh * ow; ++i) p[i] += bv;
            }
        }
        cols->push_back(std::move(col));
    }

    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_op(std::move(out), parents,
                   [B, Ci, H, W, Co, k, stride, pad, oh, ow, ckk, has_bias, cols](Node& nd) {
                       Node& xn = *nd.parents[0];
                       Node& wn = *nd.parents[1];
                       const bool need_x = xn.requires_grad;
                       const bool need_w = wn.requires_grad;
                       Tensor gw;
                       if (need_w) gw = Tensor(Shape{Co, Ci, k, k});
                       Tensor gx;
                       if (need_x) gx = Tensor(Shape{B, Ci, H, W});
                       for (int n = 0; n < B; ++n) {
                           CMap Gm(nd.grad.data() + static_cast<size_t>(n) * Co * oh * ow, Co, oh * ow);
                           if (need_w) {
                               CMap Cm((*cols)[n].data(), ckk, oh * ow);
                               MMap GW(gw.data(), Co, ckk);
                               GW.noalias() += Gm * Cm.transpose();
                           }
                           if (need_x) {
                               Tensor dcol(Shape{ckk, oh * ow});
                               CMap Wm(wn.val.data(), Co, ckk);
                               MMap Dm(dcol.data(), ckk, oh * ow);
                               Dm.noalias() = Wm.transpose() * Gm;
                               col2im_add(dcol.data(), Ci, H, W, k, stride, pad, oh, ow,
                                          gx.data() + static_cast<size_t>(n) * Ci * H * W);
                           }
                       }
                       if (need_w) accum_grad(wn, gw);
                       if (need_x) accum_grad(xn, gx);
                       if (has_bias && nd.parents[2]->requires_grad) {
                           Tensor gb(Shape{Co});
                           for (int n = 0; n < B; ++n)
                               for (int co = 0; co < Co; ++co) {
                                   const double* p =
                                       nd.grad.data() + (static_cast<size_t>(n) * Co + co) * oh * ow;
                                   double s = 0.0;
                                   for (int i = 0; i < oh * ow; ++i) s += p[i];
                                   gb.at(co) += s;
                               }
                           accum_grad(*nd.parents[2], gb);
                       }
                   });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.val().ndim() != 4 || w.val().ndim() != 4)
        throw ShapeError("conv_transpose2d: need x[B,C,H,W], w[Ci,Co,k,k]");
    const int B = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int Co = w.shape()[1], k = w.shape()[2];
    if (w.shape()[0] != Ci)
        throw ShapeError("conv_transpose2d: channel mismatch x" + shape_str(x.shape()) + " w" +
                         shape_str(w.shape()));
    const int oh = (H - 1) * stride - 2 * pad + k;
    const int ow = (W - 1) * stride - 2 * pad + k;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
    const int ckk = Co * k * k;
    const bool has_bias = b.defined();

    Tensor out(Shape{B, Co, oh, ow});
    for (int n = 0; n < B; ++n) {
        Tensor col(Shape{ckk, H * W});
        CMap Wm(w.val().data(), Ci, ckk);
        CMap Xm(x.val().data() + static_cast<size_t>(n) * Ci * H * W, Ci, H * W);
        MMap Cm(col.data(), ckk, H * W);
        Cm.noalias() = Wm.transpose() * Xm;
        col2im_add(col.data(), Co, oh, ow, k, stride, pad, H, W,
                   out.data() + static_cast<size_t>(n) * Co * oh * ow);
        if (has_bias) {
            for (int co = 0; co < Co; ++co) {
                double* p = out.data() + (static_cast<size_t>(n) * Co + co) * oh * ow;
                const double bv = b.val().at(co);
                for (int i = 0; i < oh * ow; ++i) p[i] += bv;
            }
        }
    }

    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_op(std::move(out), parents,
                   [B, Ci, H, W, Co, k, stride, pad, oh, ow, ckk, has_bias](Node& nd) {
                       Node& xn = *nd.parents[0];
                       Node& wn = *nd.parents[1];
                       const bool need_x = xn.requires_grad;
                       const bool need_w = wn.requires_grad;
                       Tensor gw;
                       if (need_w) gw = Tensor(Shape{Ci, Co, k, k});
                       Tensor gx;
                       if (need_x) gx = Tensor(Shape{B, Ci, H, W});
                       for (int n = 0; n < B; ++n) {
                           Tensor dcol(Shape{ckk, H * W});
                           im2col(nd.grad.data() + static_cast<size_t>(n) * Co * oh * ow, Co, oh, ow, k,
                                  stride, pad, H, W, dcol.data());
                           if (need_x) {
                               CMap Wm(wn.val.data(), Ci, ckk);
                               CMap Dm(dcol.data(), ckk, H * W);
                               MMap GX(gx.data() + static_cast<size_t>(n) * Ci * H * W, Ci, H * W);
                               GX.noalias() = Wm * Dm;
                           }
                           if (need_w) {
                               CMap Xm(xn.val.data() + static_cast<size_t>(n) * Ci * H * W, Ci, H * W);
                               CMap Dm(dcol.data(), ckk, H * W);
                               MMap GW(gw.data(), Ci, ckk);
                               GW.noalias() += Xm * Dm.transpose();
                           }
                       }
                       if (need_w) accum_grad(wn, gw);
                       if (need_x) accum_grad(xn, gx);
                       if (has_bias && nd.parents[2]->requires_grad) {
                           Tensor gb(Shape{Co});
                           for (int n = 0; n < B; ++n)
                               for (int co = 0; co < Co; ++co) {
                                   const double* p =
                                       nd.grad.data() + (static_cast<size_t>(n) * Co + co) * oh * ow;
                                   double s = 0.0;
                                   for (int i = 0; i < oh * ow; ++i) s += p[i];
                                   gb.at(co) += s;
                               }
                           accum_grad(*nd.parents[2], gb);
                       }
                   });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, bool training, double eps, double momentum) {
    if (x.val().ndim() != 4) throw ShapeError("batchnorm2d: need [B,C,H,W]");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const long long M = static_cast<long long>(B) * H * W;

    Tensor mean(Shape{C}), invstd(Shape{C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < B; ++n) {
                const double* p = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
                for (long long i = 0; i < static_cast<long long>(H) * W; ++i) s += p[i];
            }
            mean.at(c) = s / static_cast<double>(M);
        }
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < B; ++n) {
                const double* p = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
                for (long long i = 0; i < static_cast<long long>(H) * W; ++i) {
                    const double d = p[i] - mean.at(c);
                    s += d * d;
                }
            }
            const double var = s / static_cast<double>(M);
            invstd.at(c) = 1.0 / std::sqrt(var + eps);
            const double unbiased = M > 1 ? s / static_cast<double>(M - 1) : var;
            running_mean.at(c) = (1.0 - momentum) * running_mean.at(c) + momentum * mean.at(c);
            running_var.at(c) = (1.0 - momentum) * running_var.at(c) + momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean.at(c) = running_mean.at(c);
            invstd.at(c) = 1.0 / std::sqrt(running_var.at(c) + eps);
        }
    }

    Tensor xhat(x.shape());
    Tensor out(x.shape());
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* px = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
            double* ph = xhat.data() + (static_cast<size_t>(n) * C + c) * H * W;
            double* po = out.data() + (static_cast<size_t>(n) * C + c) * H * W;
            const double mu = mean.at(c), is = invstd.at(c);
            const double g = gamma.val().at(c), bv = beta.val().at(c);
            for (long long i = 0; i < static_cast<long long>(H) * W; ++i) {
                ph[i] = (px[i] - mu) * is;
                po[i] = g * ph[i] + bv;
            }
        }

    auto xhat_s = std::make_shared<Tensor>(std::move(xhat));
    auto invstd_s = std::make_shared<Tensor>(std::move(invstd));
    return make_op(std::move(out), {x, gamma, beta},
                   [B, C, H, W, M, training, xhat_s, invstd_s](Node& nd) {
                       const Tensor& xh = *xhat_s;
                       Node& xn = *nd.parents[0];
                       Node& gn = *nd.parents[1];
                       Node& bn = *nd.parents[2];
                       Tensor dgamma(Shape{C}), dbeta(Shape{C});
                       for (int n = 0; n < B; ++n)
                           for (int c = 0; c < C; ++c) {
                               const double* pg = nd.grad.data() + (static_cast<size_t>(n) * C + c) * H * W;
                               const double* ph = xh.data() + (static_cast<size_t>(n) * C + c) * H * W;
                               double sg = 0.0, sh = 0.0;
                               for (long long i = 0; i < static_cast<long long>(H) * W; ++i) {
                                   sg += pg[i];
                                   sh += pg[i] * ph[i];
                               }
                               dbeta.at(c) += sg;
                               dgamma.at(c) += sh;
                           }
                       if (gn.requires_grad) accum_grad(gn, dgamma);
                       if (bn.requires_grad) accum_grad(bn, dbeta);
                       if (!xn.requires_grad) return;
                       Tensor gx(xn.val.shape);
                       for (int c = 0; c < C; ++c) {
                           const double g = gn.val.at(c);
                           const double is = invstd_s->at(c);
                           const double mdy = dbeta.at(c) / static_cast<double>(M);
                           const double mdyh = dgamma.at(c) / static_cast<double>(M);
                           for (int n = 0; n < B; ++n) {
                               const double* pg = nd.grad.data() + (static_cast<size_t>(n) * C + c) * H * W;
                               const double* ph = xh.data() + (static_cast<size_t>(n) * C + c) * H * W;
                               double* px = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
                               if (training) {
                                   for (long long i = 0; i < static_cast<long long>(H) * W; ++i)
                                       px[i] = g * is * (pg[i] - mdy - ph[i] * mdyh);
                               } else {
                                   for (long long i = 0; i < static_cast<long long>(H) * W; ++i)
                                       px[i] = g * is * pg[i];
                               }
                           }
                       }
                       accum_grad(xn, gx);
                   });
}

Var maxpool2d(const Var& x, int k, int stride, int pad) {
    if (x.val().ndim() != 4) throw ShapeError("maxpool2d: need [B,C,H,W]");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int oh = conv_out(H, k, stride, pad), ow = conv_out(W, k, stride, pad);
    Tensor out(Shape{B, C, oh, ow});
    auto argmax = std::make_shared<std::vector<long long>>(static_cast<size_t>(B) * C * oh * ow);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double best = -1e300;
                    long long bidx = -1;
                    for (int i = 0; i < k; ++i) {
                        const int y = oy * stride - pad + i;
                        if (y < 0 || y >= H) continue;
                        for (int j = 0; j < k; ++j) {
                            const int x2 = ox * stride - pad + j;
                            if (x2 < 0 || x2 >= W) continue;
                            const double v = src[static_cast<size_t>(y) * W + x2];
                            if (v > best) {
                                best = v;
                                bidx = static_cast<long long>(y) * W + x2;
                            }
                        }
                    }
                    const size_t oidx = ((static_cast<size_t>(n) * C + c) * oh + oy) * ow + ox;
                    out.v[oidx] = best;
                    (*argmax)[oidx] = bidx;
                }
        }
    return make_op(std::move(out), {x}, [B, C, H, W, oh, ow, argmax](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor gx(nd.parents[0]->val.shape);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                double* dst = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
                const size_t base = (static_cast<size_t>(n) * C + c) * oh * ow;
                for (int i = 0; i < oh * ow; ++i) {
                    const long long a = (*argmax)[base + i];
                    if (a >= 0) dst[a] += nd.grad.v[base + i];
                }
            }
        accum_grad(*nd.parents[0], gx);
    });
}

Var avgpool_global(const Var& x) {
    if (x.val().ndim() != 4) throw ShapeError("avgpool_global: need [B,C,H,W]");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor out(Shape{B, C});
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
            double s = 0.0;
            for (long long i = 0; i < static_cast<long long>(H) * W; ++i) s += p[i];
            out.at(n, c) = s * inv;
        }
    return make_op(std::move(out), {x}, [B, C, H, W, inv](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor gx(nd.parents[0]->val.shape);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                double* p = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
                const double g = nd.grad.at(n, c) * inv;
                for (long long i = 0; i < static_cast<long long>(H) * W; ++i) p[i] = g;
            }
        accum_grad(*nd.parents[0], gx);
    });
}

Var upsample2x_nearest(const Var& x) {
    if (x.val().ndim() != 4) throw ShapeError("upsample2x_nearest: need [B,C,H,W]");
    const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    Tensor out(Shape{B, C, 2 * H, 2 * W});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = x.val().data() + (static_cast<size_t>(n) * C + c) * H * W;
            double* dst = out.data() + (static_cast<size_t>(n) * C + c) * 4 * H * W;
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx)
                    dst[static_cast<size_t>(y) * 2 * W + xx] = src[static_cast<size_t>(y / 2) * W + xx / 2];
        }
    return make_op(std::move(out), {x}, [B, C, H, W](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor gx(nd.parents[0]->val.shape);
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c) {
                const double* src = nd.grad.data() + (static_cast<size_t>(n) * C + c) * 4 * H * W;
                double* dst = gx.data() + (static_cast<size_t>(n) * C + c) * H * W;
                for (int y = 0; y < 2 * H; ++y)
                    for (int xx = 0; xx < 2 * W; ++xx)
                        dst[static_cast<size_t>(y / 2) * W + xx / 2] += src[static_cast<size_t>(y) * 2 * W + xx];
            }
        accum_grad(*nd.parents[0], gx);
    });
}

Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    if (x.val().ndim() != 2) throw ShapeError("layernorm_rows: need [R,d]");
    const int R = x.shape()[0], D = x.shape()[1];
    if (gamma.shape() != Shape{D} || beta.shape() != Shape{D})
        throw ShapeError("layernorm_rows: affine params must be [d]");
    Tensor xhat(x.shape()), out(x.shape()), invstd(Shape{R});
    for (int r = 0; r < R; ++r) {
        double mu = 0.0;
        for (int j = 0; j < D; ++j) mu += x.val().at(r, j);
        mu /= D;
        double var = 0.0;
        for (int j = 0; j < D; ++j) {
            const double d = x.val().at(r, j) - mu;
            var += d * d;
        }
        var /= D;
        const double is = 1.0 / std::sqrt(var + eps);
        invstd.at(r) = is;
        for (int j = 0; j < D; ++j) {
            xhat.at(r, j) = (x.val().at(r, j) - mu) * is;
            out.at(r, j) = gamma.val().at(j) * xhat.at(r, j) + beta.val().at(j);
        }
    }
    auto xhat_s = std::make_shared<Tensor>(std::move(xhat));
    auto invstd_s = std::make_shared<Tensor>(std::move(invstd));
    return make_op(std::move(out), {x, gamma, beta}, [R, D, xhat_s, invstd_s](Node& nd) {
        const Tensor& xh = *xhat_s;
        Node& xn = *nd.parents[0];
        Node& gn = *nd.parents[1];
        Node& bn = *nd.parents[2];
        if (gn.requires_grad || bn.requires_grad) {
            Tensor dg(Shape{D}), db(Shape{D});
            for (int r = 0; r < R; ++r)
                for (int j = 0; j < D; ++j) {
                    dg.at(j) += nd.grad.at(r, j) * xh.at(r, j);
                    db.at(j) += nd.grad.at(r, j);
                }
            if (gn.requires_grad) accum_grad(gn, dg);
            if (bn.requires_grad) accum_grad(bn, db);
        }
        if (!xn.requires_grad) return;
        Tensor gx(xn.val.shape);
        for (int r = 0; r < R; ++r) {
            double mdy = 0.0, mdyh = 0.0;
            for (int j = 0; j < D; ++j) {
                const double dy = nd.grad.at(r, j) * gn.val.at(j);
                mdy += dy;
                mdyh += dy * xh.at(r, j);
            }
            mdy /= D;
            mdyh /= D;
            for (int j = 0; j < D; ++j) {
                const double dy = nd.grad.at(r, j) * gn.val.at(j);
                gx.at(r, j) = invstd_s->at(r) * (dy - mdy - xh.at(r, j) * mdyh);
            }
        }
        accum_grad(xn, gx);
    });
}

Var roi_crop_bilinear(const Var& fmap, const std::vector<RoiBox>& boxes, int p) {
    if (fmap.val().ndim() != 4) throw ShapeError("roi_crop_bilinear: need [B,C,h,w]");
    const int C = fmap.shape()[1], h = fmap.shape()[2], w = fmap.shape()[3];
    const int M = static_cast<int>(boxes.size());
    Tensor out(Shape{M, C, p, p});

    // Bilinear sample with border clamp; weights saved for the backward pass.
    struct Tap {
        long long i00, i01, i10, i11;
        double w00, w01, w10, w11;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(M) * p * p);
    for (int m = 0; m < M; ++m) {
        const RoiBox& bx = boxes[m];
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < p; ++j) {
                double sy = bx.y0 + (i + 0.5) * (bx.y1 - bx.y0) / p;
                double sx = bx.x0 + (j + 0.5) * (bx.x1 - bx.x0) / p;
                sy = std::min(static_cast<double>(h - 1), std::max(0.0, sy));
                sx = std::min(static_cast<double>(w - 1), std::max(0.0, sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const int x0 = static_cast<int>(std::floor(sx));
                const int y1 = std::min(y0 + 1, h - 1);
                const int x1 = std::min(x0 + 1, w - 1);
                const double fy = sy - y0, fx = sx - x0;
                Tap& t = (*taps)[(static_cast<size_t>(m) * p + i) * p + j];
                t.i00 = static_cast<long long>(y0) * w + x0;
                t.i01 = static_cast<long long>(y0) * w + x1;
                t.i10 = static_cast<long long>(y1) * w + x0;
                t.i11 = static_cast<long long>(y1) * w + x1;
                t.w00 = (1 - fy) * (1 - fx);
                t.w01 = (1 - fy) * fx;
                t.w10 = fy * (1 - fx);
                t.w11 = fy * fx;
            }
    }
    std::vector<int> batch_of(boxes.size());
    for (size_t m = 0; m < boxes.size(); ++m) batch_of[m] = boxes[m].b;

    for (int m = 0; m < M; ++m)
        for (int c = 0; c < C; ++c) {
            const double* src = fmap.val().data() + (static_cast<size_t>(batch_of[m]) * C + c) * h * w;
            double* dst = out.data() + (static_cast<size_t>(m) * C + c) * p * p;
            for (int i = 0; i < p * p; ++i) {
                const Tap& t = (*taps)[static_cast<size_t>(m) * p * p + i];
                dst[i] = t.w00 * src[t.i00] + t.w01 * src[t.i01] + t.w10 * src[t.i10] + t.w11 * src[t.i11];
            }
        }

    return make_op(std::move(out), {fmap}, [C, h, w, M, p, taps, batch_of](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor gx(nd.parents[0]->val.shape);
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < C; ++c) {
                double* dst = gx.data() + (static_cast<size_t>(batch_of[m]) * C + c) * h * w;
                const double* g = nd.grad.data() + (static_cast<size_t>(m) * C + c) * p * p;
                for (int i = 0; i < p * p; ++i) {
                    const Tap& t = (*taps)[static_cast<size_t>(m) * p * p + i];
                    dst[t.i00] += t.w00 * g[i];
                    dst[t.i01] += t.w01 * g[i];
                    dst[t.i10] += t.w10 * g[i];
                    dst[t.i11] += t.w11 * g[i];
                }
            }
        accum_grad(*nd.parents[0], gx);
    });
}

}  // namespace rtatl
