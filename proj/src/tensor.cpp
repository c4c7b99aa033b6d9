#include "rtatl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rtatl {

long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("Tensor: negative dimension " + shape_str(shape));
    }
    v.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::scalar(double x) {
    Tensor t(Shape{1});
    t.v[0] = x;
    return t;
}

Tensor Tensor::from(Shape s, std::vector<double> data) {
    Tensor t;
    t.shape = std::move(s);
    if (shape_numel(t.shape) != static_cast<long long>(data.size()))
        throw std::invalid_argument("Tensor::from: data size does not match shape " + shape_str(t.shape));
    t.v = std::move(data);
    return t;
}

void Tensor::fill(double x) {
    for (double& e : v) e = x;
}

bool Tensor::all_finite() const {
    for (double e : v)
        if (!std::isfinite(e)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::fabs(e));
    return m;
}

}  // namespace rtatl
