#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace gpa {

// Flat row-major tensor; the interchange container used by the checkpoint
// format and by code that walks parameters uniformly.
struct DenseTensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    std::size_t size() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    void validate() const {
        if (size() != data.size())
            throw std::invalid_argument("tensor shape/data size mismatch");
    }

    static DenseTensor zeros(std::vector<std::size_t> shape) {
        DenseTensor t;
        t.shape = std::move(shape);
        t.data.assign(t.size(), 0.0);
        return t;
    }
};

} // namespace gpa
