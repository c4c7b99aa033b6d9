#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rtatl {

using Shape = std::vector<int>;

long long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major double tensor, rank 0..4. The autodiff graph, the data
// pipeline and the model all share this one storage type.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    static Tensor scalar(double x);
    static Tensor from(Shape s, std::vector<double> data);

    long long numel() const { return static_cast<long long>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return v.empty(); }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& at(int i) { return v[static_cast<size_t>(i)]; }
    double at(int i) const { return v[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }
    double& at(int i, int j, int k) {
        return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double at(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double& at(int i, int j, int k, int l) {
        return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double at(int i, int j, int k, int l) const {
        return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    void fill(double x);
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    double max_abs() const;
};

}  // namespace rtatl
