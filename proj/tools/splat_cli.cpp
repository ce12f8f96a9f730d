// splat: command-line front end for mean-space construction, offline
// splatting/resampling, adjoint self-tests, Dice scoring and header dumps.
//
// Exit codes: 0 success, 1 self-test failed, 2 usage/geometry error,
// 3 numerical non-convergence, 4 I/O error.

#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "splat/splat.hpp"

namespace {

constexpr int kExitFailedCheck = 1;
constexpr int kExitGeometry = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct Options {
    unsigned threads = 0;
    bool deterministic = true;

    std::vector<std::string> inputs;
    std::vector<double> voxel_size;
    std::string out;

    std::string input;
    std::string space;
    std::string count;
    std::string like;
    std::string datatype;

    std::vector<std::int64_t> dims_src{8, 8, 8};
    std::vector<std::int64_t> dims_dst{8, 8, 8};
    std::uint64_t seed = 0;
    int trials = 100;
    bool corrupt = false;

    int classes = 2;
};

splat::Execution execution(const Options& o) {
    return {o.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : o.threads,
            o.deterministic};
}

// Floating inputs keep their datatype; integer inputs are written as float32.
splat::nifti::Datatype output_datatype(const Options& o, splat::nifti::Datatype input) {
    if (!o.datatype.empty()) return splat::nifti::parse_datatype(o.datatype);
    if (input == splat::nifti::Datatype::float64) return input;
    return splat::nifti::Datatype::float32;
}

std::string join(const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
    return s;
}

int cmd_mean_space(const Options& o) {
    std::vector<splat::GridSpec> grids;
    for (const auto& path : o.inputs) grids.push_back(splat::nifti::read(path).volume.grid());
    const int d = grids.front().dim();
    splat::Vector vs = splat::Vector::Ones(d);
    if (o.voxel_size.size() == 1) {
        vs.setConstant(o.voxel_size.front());
    } else if (!o.voxel_size.empty()) {
        if (static_cast<int>(o.voxel_size.size()) != d) {
            throw splat::GeometryError("--voxel-size takes 1 or " + std::to_string(d) + " values");
        }
        for (int k = 0; k < d; ++k) vs(k) = o.voxel_size[static_cast<std::size_t>(k)];
    }
    const auto result = splat::mean_space(grids, vs);
    splat::write_space({result.space, vs}, o.out);
    std::printf("dims %s\n", join(result.space.dims()).c_str());
    std::printf("voxel_size");
    for (int k = 0; k < d; ++k) std::printf(" %g", vs(k));
    std::printf("\niterations %d\n", result.iterations);
    return 0;
}

int cmd_push(const Options& o) {
    const auto in = splat::nifti::read(o.input);
    const auto space = splat::read_space(o.space);
    const splat::GridSpec input_grid = in.volume.grid();
    if (space.grid.dim() != input_grid.dim()) {
        throw splat::GeometryError("space descriptor dimensionality does not match input");
    }
    const auto result = splat::push(in.volume, space.grid, execution(o));
    const auto dt = output_datatype(o, in.header.datatype);
    splat::write_volume(result.pushed, o.out, dt);
    if (!o.count.empty()) splat::write_volume(result.count, o.count, dt);
    return 0;
}

int cmd_pull(const Options& o) {
    const auto in = splat::nifti::read(o.input);
    const auto like = splat::nifti::read(o.like);
    const auto result = splat::pull(in.volume, like.volume.grid(), execution(o));
    splat::write_volume(result, o.out, output_datatype(o, in.header.datatype));
    return 0;
}

int cmd_adjoint_test(const Options& o) {
    for (auto n : o.dims_src) {
        if (n < 1 || n > 32) throw splat::GeometryError("--dims-src entries must be in [1, 32]");
    }
    for (auto n : o.dims_dst) {
        if (n < 1 || n > 32) throw splat::GeometryError("--dims-dst entries must be in [1, 32]");
    }
    if (o.trials < 1) throw splat::GeometryError("--trials must be positive");
    const auto report =
        splat::adjoint_trials(o.dims_src, o.dims_dst, o.trials, o.seed, o.corrupt, execution(o));
    const bool ok = report.max_relative_error <= 1e-10;
    std::printf("trials %d\nmax_relative_error %.3e\n%s\n", report.trials,
                report.max_relative_error, ok ? "PASS" : "FAIL");
    return ok ? 0 : kExitFailedCheck;
}

int cmd_dice(const Options& o) {
    if (o.inputs.size() != 2) throw splat::GeometryError("dice takes exactly two label maps");
    const auto a = splat::read_volume(o.inputs[0]);
    const auto b = splat::read_volume(o.inputs[1]);
    const auto scores = splat::dice(a, b, o.classes);
    std::printf("class dice\n");
    for (const auto& s : scores) std::printf("%d %.3f\n", s.label, s.score);
    std::printf("median %.3f\n", splat::median_score(scores));
    return 0;
}

int cmd_info(const Options& o) {
    const auto file = splat::nifti::read(o.input);
    const auto& h = file.header;
    const auto& grid = file.volume.grid();
    std::printf("dims %s\n", join(grid.dims()).c_str());
    std::printf("channels %d\n", file.volume.channels());
    std::printf("datatype %s\n", splat::nifti::datatype_name(h.datatype));
    std::printf("byte_order %s\n", h.byte_order == std::endian::little ? "little" : "big");
    std::printf("pixdim %g %g %g\n", h.pixdim[1], h.pixdim[2], h.pixdim[3]);
    std::printf("sform_code %d\n", h.sform_code);
    const auto& m = grid.affine().matrix();
    for (int r = 0; r < 3; ++r) {
        std::printf("affine %g %g %g %g\n", m(r, 0), m(r, 1), m(r, 2), m(r, 3));
    }
    for (int corner = 0; corner < 8; ++corner) {
        splat::Vector x(3);
        for (int k = 0; k < 3; ++k) {
            x(k) = (corner >> k) & 1 ? static_cast<double>(grid.dims(k) - 1) : 0.0;
        }
        const splat::Vector y = grid.affine().apply(x);
        std::printf("corner %g %g %g -> %g %g %g\n", x(0), x(1), x(2), y(0), y(1), y(2));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mean-space splatting and resampling toolkit"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--threads", o.threads, "Worker threads (0 = available parallelism)");
    app.add_flag("--deterministic,!--nondeterministic", o.deterministic,
                 "Bitwise-reproducible accumulation (default on)");

    auto* mean = app.add_subcommand("mean-space", "Compute a mean space from volume headers");
    mean->add_option("inputs", o.inputs, "Input volumes")->required();
    mean->add_option("--voxel-size", o.voxel_size, "Voxel size in mm (1 or D values)");
    mean->add_option("--out", o.out, "Output space descriptor (JSON)")->required();

    auto* push = app.add_subcommand("push", "Splat a volume onto a mean space");
    push->add_option("-i,--input", o.input)->required();
    push->add_option("--space", o.space, "Space descriptor (JSON)")->required();
    push->add_option("-o,--out", o.out)->required();
    push->add_option("--count", o.count, "Output count image");
    push->add_option("--datatype", o.datatype, "uint8 | int16 | float32 | float64");

    auto* pull = app.add_subcommand("pull", "Resample a volume onto another volume's grid");
    pull->add_option("-i,--input", o.input)->required();
    pull->add_option("--like", o.like, "Volume whose grid is the target")->required();
    pull->add_option("-o,--out", o.out)->required();
    pull->add_option("--datatype", o.datatype, "uint8 | int16 | float32 | float64");

    auto* adj = app.add_subcommand("adjoint-test", "Randomised push/pull adjoint identity check");
    adj->add_option("--dims-src", o.dims_src)->expected(1, 3);
    adj->add_option("--dims-dst", o.dims_dst)->expected(1, 3);
    adj->add_option("--seed", o.seed);
    adj->add_option("--trials", o.trials);
    adj->add_flag("--corrupt", o.corrupt, "Perturb the pull geometry (negative control)");

    auto* dice = app.add_subcommand("dice", "Per-class Dice scores between two label maps");
    dice->add_option("inputs", o.inputs, "Predicted and target label maps")->required()->expected(2);
    dice->add_option("--classes", o.classes, "Number of classes including background")->required();

    auto* info = app.add_subcommand("info", "Print a volume header summary");
    info->add_option("input", o.input)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitGeometry;
    }

    try {
        if (*mean) return cmd_mean_space(o);
        if (*push) return cmd_push(o);
        if (*pull) return cmd_pull(o);
        if (*adj) return cmd_adjoint_test(o);
        if (*dice) return cmd_dice(o);
        if (*info) return cmd_info(o);
    } catch (const splat::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const splat::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeometry;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitGeometry;
}
