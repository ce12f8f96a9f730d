// Four samples at 2.5 mm spacing, resampled and splatted onto an 8-voxel
// 1 mm grid.

#include <cstdio>

#include "splat/splat.hpp"

namespace {

void print(const char* name, const splat::Volume& v) {
    std::printf("%-8s", name);
    for (double x : v.data()) std::printf(" %5.2f", x);
    std::printf("\n");
}

} // namespace

int main() {
    splat::Matrix native(2, 2);
    native << 2.5, 0.0, 0.0, 1.0;
    const splat::GridSpec native_grid({4}, splat::AffineMap(native));
    const splat::GridSpec mean_grid({8}, splat::AffineMap::identity(1));

    const splat::Volume f(native_grid, 1, {10, 11, 12, 13});
    print("pulled", splat::pull(f, mean_grid));

    const auto splatted = splat::push(f, mean_grid);
    print("pushed", splatted.pushed);
    print("count", splatted.count);

    const std::vector<splat::GridSpec> cohort{native_grid};
    const auto space = splat::mean_space(cohort);
    std::printf("mean space: %lld voxels\n", static_cast<long long>(space.space.dims(0)));
    return 0;
}
