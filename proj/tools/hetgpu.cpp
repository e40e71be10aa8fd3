// Command-line driver: assemble/check modules, run kernels on the simulated
// devices or the reference interpreter, checkpoint to .hgpb files, and run
// scripted migrations between devices.
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hetgpu/error.h"
#include "hetgpu/ir.h"
#include "hetgpu/oracle.h"
#include "hetgpu/runtime.h"
#include "hetgpu/snapshot.h"
#include "hetgpu/text.h"

namespace {

using namespace hetgpu;

int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::Fault: return 2;
        case ErrorKind::State: return 3;
        default: return 1;
    }
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Validation, "cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const void* data, size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::Validation, "cannot write file: " + path);
    f.write(static_cast<const char*>(data), std::streamsize(n));
}

ir::Module parse_module(const std::string& path) {
    auto bytes = read_file(path);
    auto res = text::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                            bytes.size()),
                           path);
    if (!res.ok()) fail(ErrorKind::Validation, res.diagnostics_text());
    return std::move(res.module);
}

std::array<uint32_t, 3> parse_dims(const std::string& s) {
    std::array<uint32_t, 3> d{1, 1, 1};
    std::stringstream ss(s);
    std::string part;
    int i = 0;
    while (std::getline(ss, part, ',') && i < 3) d[i++] = uint32_t(std::stoul(part));
    return d;
}

uint64_t pack_f32_slot(float f) {
    uint32_t w;
    std::memcpy(&w, &f, 4);
    return w;
}

uint64_t pack_f64_slot(double d) {
    uint64_t w;
    std::memcpy(&w, &d, 8);
    return w;
}

// buffer initializers: zero:<bytes>, fill:<type>:<value>:<count>,
// iota:u32:<count>, file:<path>
std::vector<uint8_t> build_buffer(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string p;
    while (std::getline(ss, p, ':')) parts.push_back(p);
    if (parts.empty()) fail(ErrorKind::Validation, "empty buffer initializer");
    if (parts[0] == "zero" && parts.size() == 2)
        return std::vector<uint8_t>(std::stoull(parts[1]), 0);
    if (parts[0] == "file" && parts.size() >= 2)
        return read_file(spec.substr(5));
    if (parts[0] == "iota" && parts.size() == 3 && parts[1] == "u32") {
        size_t n = std::stoull(parts[2]);
        std::vector<uint8_t> v(n * 4);
        for (size_t i = 0; i < n; ++i) {
            uint32_t x = uint32_t(i);
            std::memcpy(v.data() + i * 4, &x, 4);
        }
        return v;
    }
    if (parts[0] == "fill" && parts.size() == 4) {
        size_t n = std::stoull(parts[3]);
        std::vector<uint8_t> v;
        if (parts[1] == "f32") {
            float x = std::stof(parts[2]);
            v.resize(n * 4);
            for (size_t i = 0; i < n; ++i) std::memcpy(v.data() + i * 4, &x, 4);
        } else if (parts[1] == "u32") {
            uint32_t x = uint32_t(std::stoul(parts[2]));
            v.resize(n * 4);
            for (size_t i = 0; i < n; ++i) std::memcpy(v.data() + i * 4, &x, 4);
        } else if (parts[1] == "u64") {
            uint64_t x = std::stoull(parts[2]);
            v.resize(n * 8);
            for (size_t i = 0; i < n; ++i) std::memcpy(v.data() + i * 8, &x, 8);
        } else {
            fail(ErrorKind::Validation, "fill type must be f32, u32 or u64");
        }
        return v;
    }
    fail(ErrorKind::Validation, "bad buffer initializer: " + spec);
}

struct ParsedArg {
    bool is_buf = false;
    std::string buf_name;
    uint64_t slot = 0;
};

ParsedArg parse_arg(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
        fail(ErrorKind::Validation, "argument must look like kind:value, got " + spec);
    std::string kind = spec.substr(0, colon), val = spec.substr(colon + 1);
    ParsedArg a;
    if (kind == "buf") {
        a.is_buf = true;
        a.buf_name = val;
    } else if (kind == "u32") {
        a.slot = uint32_t(std::stoul(val));
    } else if (kind == "s32") {
        a.slot = uint64_t(int64_t(int32_t(std::stol(val))));
    } else if (kind == "u64") {
        a.slot = std::stoull(val);
    } else if (kind == "f32") {
        a.slot = pack_f32_slot(std::stof(val));
    } else if (kind == "f64") {
        a.slot = pack_f64_slot(std::stod(val));
    } else {
        fail(ErrorKind::Validation, "unknown argument kind: " + kind);
    }
    return a;
}

ir::DeviceDesc simt_desc() {
    ir::DeviceDesc d;
    d.model = ir::DeviceModel::SIMT;
    d.name = "simt0";
    return d;
}

ir::DeviceDesc mimd_desc() {
    ir::DeviceDesc d;
    d.model = ir::DeviceModel::MIMD;
    d.name = "mimd0";
    return d;
}

// shared flags between run and migrate
struct RunOpts {
    std::string file, kernel;
    std::string grid = "1", block = "1";
    std::string device = "simt";
    std::string strategy;
    uint32_t partition_width = 0;
    int64_t segment_x = -1;
    bool migration_mode = false;
    uint64_t sched_seed = 0;
    uint64_t pause_after = 0;
    int64_t pause_at_barrier = -1;
    std::string snapshot_path;
    std::vector<std::string> bufs, args, dumps;
};

void add_run_flags(CLI::App* cmd, RunOpts& o, bool with_device) {
    cmd->add_option("file", o.file, "module file (.hir)")->required();
    cmd->add_option("--kernel", o.kernel, "kernel name")->required();
    cmd->add_option("--grid", o.grid, "grid dims, e.g. 64,1,1");
    cmd->add_option("--block", o.block, "block dims, e.g. 256,1,1");
    if (with_device)
        cmd->add_option("--device", o.device, "simt | mimd | oracle");
    cmd->add_option("--strategy", o.strategy,
                    "mimd strategy: single_core | multi_core | independent_thread");
    cmd->add_option("--partition-width", o.partition_width, "lanes per mimd context");
    cmd->add_option("--segment-x", o.segment_x, "insert a grid barrier every X loop trips");
    cmd->add_flag("--migration-mode", o.migration_mode, "lower with suspension checks");
    cmd->add_option("--sched-seed", o.sched_seed, "scheduler interleaving seed");
    cmd->add_option("--pause-after-instructions", o.pause_after,
                    "pause at the first suspension check past N executed instructions");
    cmd->add_option("--pause-at-barrier", o.pause_at_barrier,
                    "pause at the first arrival at barrier site K");
    cmd->add_option("--snapshot", o.snapshot_path, "write a state blob when paused");
    cmd->add_option("--buf", o.bufs, "NAME=INIT buffer (zero:N, fill:t:v:N, iota:u32:N, file:p)");
    cmd->add_option("--arg", o.args, "kernel argument: buf:NAME | u32:N | s32:N | u64:N | f32:V | f64:V");
    cmd->add_option("--dump", o.dumps, "NAME:FILE write buffer bytes after the run");
}

rt::LaunchOptions lowering_opts(const RunOpts& o) {
    rt::LaunchOptions opts;
    if (!o.strategy.empty()) {
        lowering::MimdStrategy st;
        if (!lowering::strategy_from_string(o.strategy, &st))
            fail(ErrorKind::Validation, "unknown strategy: " + o.strategy);
        opts.strategy = st;
    }
    opts.partition_width = o.partition_width;
    if (o.segment_x >= 0) opts.segment_x = uint32_t(o.segment_x);
    opts.migration_mode = o.migration_mode || o.pause_after > 0 || o.pause_at_barrier >= 0 ||
                          !o.snapshot_path.empty();
    opts.sched_seed = o.sched_seed;
    return opts;
}

struct BufferSet {
    std::vector<std::pair<std::string, std::vector<uint8_t>>> decls;

    explicit BufferSet(const std::vector<std::string>& specs) {
        for (const auto& s : specs) {
            auto eq = s.find('=');
            if (eq == std::string::npos)
                fail(ErrorKind::Validation, "buffer must look like NAME=INIT, got " + s);
            decls.emplace_back(s.substr(0, eq), build_buffer(s.substr(eq + 1)));
        }
    }
    const std::vector<uint8_t>& named(const std::string& n) const {
        for (const auto& [name, bytes] : decls)
            if (name == n) return bytes;
        fail(ErrorKind::Validation, "no buffer named " + n);
    }
};

void write_dumps(const std::vector<std::string>& dumps,
                 const std::function<std::vector<uint8_t>(const std::string&)>& fetch) {
    for (const auto& d : dumps) {
        auto colon = d.find(':');
        if (colon == std::string::npos)
            fail(ErrorKind::Validation, "dump must look like NAME:FILE, got " + d);
        auto bytes = fetch(d.substr(0, colon));
        write_file(d.substr(colon + 1), bytes.data(), bytes.size());
    }
}

int cmd_check(const std::string& file, const std::string& emit) {
    auto bytes = read_file(file);
    auto res = text::parse(
        std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), file);
    if (!res.ok()) {
        std::cerr << res.diagnostics_text();
        return 1;
    }
    if (emit == "canonical") std::cout << text::print(res.module);
    std::cout << "ok: " << res.module.kernels.size() << " kernel(s), module "
              << ir::module_id_hex(res.module.module_id) << "\n";
    return 0;
}

int run_on_oracle(const RunOpts& o, const ir::Module& mod) {
    if (o.pause_after || o.pause_at_barrier >= 0 || !o.snapshot_path.empty())
        fail(ErrorKind::Validation, "the reference interpreter cannot pause or snapshot");
    const ir::Kernel* k = nullptr;
    for (const auto& kn : mod.kernels)
        if (kn.name == o.kernel) k = &kn;
    if (!k) fail(ErrorKind::Validation, "no kernel named '" + o.kernel + "'");

    BufferSet bufs(o.bufs);
    uint64_t heap = 4096;
    std::map<std::string, std::pair<uint64_t, uint64_t>> where;  // name -> offset,size
    for (const auto& [name, bytes] : bufs.decls) {
        uint64_t base = (heap + 255) & ~uint64_t(255);
        where[name] = {base, bytes.size()};
        heap = base + bytes.size();
    }
    std::vector<uint8_t> mem(heap, 0);
    for (const auto& [name, bytes] : bufs.decls)
        std::memcpy(mem.data() + where[name].first, bytes.data(), bytes.size());

    oracle::Launch launch;
    launch.grid = parse_dims(o.grid);
    launch.block = parse_dims(o.block);
    for (const auto& a : o.args) {
        ParsedArg pa = parse_arg(a);
        launch.args.push_back(pa.is_buf ? where.at(pa.buf_name).first : pa.slot);
    }
    oracle::Result res = oracle::run(*k, launch, mem);
    write_dumps(o.dumps, [&](const std::string& name) {
        auto [off, size] = where.at(name);
        return std::vector<uint8_t>(mem.begin() + off, mem.begin() + off + size);
    });
    std::cout << "status=COMPLETED\n";
    std::cout << "instructions=" << res.instructions << "\n";
    return 0;
}

void print_report(rt::Runtime& rt, uint32_t dev, device::RunState st) {
    std::cout << "status=" << (st == device::RunState::PAUSED ? "PAUSED" : "COMPLETED") << "\n";
    std::cout << "instructions=" << rt.device(dev).instructions_executed() << "\n";
    std::cout << "barrier_visits=" << rt.device(dev).barrier_visits() << "\n";
    std::cout << "dma_read_bytes=" << rt.device(dev).dma_read_bytes() << "\n";
    std::cout << "dma_write_bytes=" << rt.device(dev).dma_write_bytes() << "\n";
    std::cout << "cache_hits=" << rt.cache().hits() << "\n";
    std::cout << "cache_misses=" << rt.cache().misses() << "\n";
}

int cmd_run(const RunOpts& o) {
    ir::Module mod = parse_module(o.file);
    if (o.device == "oracle") return run_on_oracle(o, mod);
    if (o.device != "simt" && o.device != "mimd")
        fail(ErrorKind::Validation, "--device must be simt, mimd or oracle");

    rt::Runtime rt;
    uint32_t simt = rt.register_device(simt_desc());
    uint32_t mimd = rt.register_device(mimd_desc());
    uint32_t dev = o.device == "simt" ? simt : mimd;
    uint32_t stream = rt.create_stream(dev);
    rt.load_module(mod);

    BufferSet bufs(o.bufs);
    std::map<std::string, rt::VirtualPointer> vps;
    for (const auto& [name, bytes] : bufs.decls) {
        auto vp = rt.het_malloc(bytes.size(), stream);
        rt.memcpy_h2d(vp, 0, bytes.data(), bytes.size(), stream);
        vps[name] = vp;
    }
    std::vector<rt::ArgValue> args;
    for (const auto& a : o.args) {
        ParsedArg pa = parse_arg(a);
        if (pa.is_buf) {
            auto it = vps.find(pa.buf_name);
            if (it == vps.end()) fail(ErrorKind::Validation, "no buffer named " + pa.buf_name);
            args.push_back(rt::ArgValue::make_vp(it->second));
        } else {
            args.push_back(rt::ArgValue::make_scalar(pa.slot));
        }
    }

    rt.launch_kernel(o.kernel, parse_dims(o.grid), parse_dims(o.block), args, stream,
                     lowering_opts(o));
    if (o.pause_after) rt.arm_pause_after_instructions(stream, o.pause_after);
    if (o.pause_at_barrier >= 0)
        rt.arm_pause_at_barrier_site(stream, uint32_t(o.pause_at_barrier));
    device::RunState st = rt.stream_synchronize(stream);

    if (!o.snapshot_path.empty()) {
        auto blob = rt.checkpoint(stream);
        auto bytes = snapshot::serialize(blob);
        write_file(o.snapshot_path, bytes.data(), bytes.size());
        std::cout << "snapshot=" << o.snapshot_path << "\n";
    }
    write_dumps(o.dumps, [&](const std::string& name) {
        auto it = vps.find(name);
        if (it == vps.end()) fail(ErrorKind::Validation, "no buffer named " + name);
        std::vector<uint8_t> bytes(rt.vp_size(it->second));
        rt.memcpy_d2h(bytes.data(), it->second, 0, bytes.size(), stream);
        return bytes;
    });
    print_report(rt, dev, st);
    return 0;
}

int cmd_migrate(const RunOpts& o, const std::string& from, const std::string& to_list) {
    ir::Module mod = parse_module(o.file);
    rt::Runtime rt;
    uint32_t simt = rt.register_device(simt_desc());
    uint32_t mimd = rt.register_device(mimd_desc());
    auto dev_of = [&](const std::string& n) {
        if (n == "simt") return simt;
        if (n == "mimd") return mimd;
        fail(ErrorKind::Validation, "device must be simt or mimd, got " + n);
    };
    uint32_t cur = dev_of(from);
    uint32_t stream = rt.create_stream(cur);
    rt.load_module(mod);

    BufferSet bufs(o.bufs);
    std::map<std::string, rt::VirtualPointer> vps;
    for (const auto& [name, bytes] : bufs.decls) {
        auto vp = rt.het_malloc(bytes.size(), stream);
        rt.memcpy_h2d(vp, 0, bytes.data(), bytes.size(), stream);
        vps[name] = vp;
    }
    std::vector<rt::ArgValue> args;
    for (const auto& a : o.args) {
        ParsedArg pa = parse_arg(a);
        if (pa.is_buf)
            args.push_back(rt::ArgValue::make_vp(vps.at(pa.buf_name)));
        else
            args.push_back(rt::ArgValue::make_scalar(pa.slot));
    }

    rt::LaunchOptions opts = lowering_opts(o);
    opts.migration_mode = true;
    rt.launch_kernel(o.kernel, parse_dims(o.grid), parse_dims(o.block), args, stream, opts);

    std::vector<std::string> hops;
    std::stringstream ss(to_list);
    std::string part;
    while (std::getline(ss, part, ',')) hops.push_back(part);
    if (hops.empty()) fail(ErrorKind::Validation, "--to needs at least one device");

    int hop_no = 0;
    for (const auto& hop : hops) {
        if (o.pause_after) rt.arm_pause_after_instructions(stream, o.pause_after);
        if (o.pause_at_barrier >= 0)
            rt.arm_pause_at_barrier_site(stream, uint32_t(o.pause_at_barrier));
        rt.stream_synchronize(stream);  // run until the trigger pauses it (or completion)
        uint32_t target = dev_of(hop);
        auto rep = rt.migrate(stream, target, opts);
        hop_no++;
        std::cout << "hop=" << hop_no << " target=" << hop
                  << " bytes_moved=" << rep.bytes_moved << " blob_bytes=" << rep.blob_bytes
                  << " dumps=" << rep.dumps_captured
                  << " blocks_resumed=" << rep.blocks_resumed << "\n";
        cur = target;
    }
    device::RunState st = rt.stream_synchronize(stream);
    write_dumps(o.dumps, [&](const std::string& name) {
        std::vector<uint8_t> bytes(rt.vp_size(vps.at(name)));
        rt.memcpy_d2h(bytes.data(), vps.at(name), 0, bytes.size(), stream);
        return bytes;
    });
    print_report(rt, cur, st);
    return 0;
}

int cmd_blob_inspect(const std::string& file) {
    auto bytes = read_file(file);
    auto blob = snapshot::deserialize(bytes);
    std::cout << snapshot::inspect(blob);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hetgpu: portable GPU IR toolchain and simulator"};
    app.require_subcommand(1);

    std::string check_file, check_emit;
    auto* check = app.add_subcommand("check", "parse and validate a module");
    check->add_option("file", check_file)->required();
    check->add_option("--emit", check_emit, "canonical: print canonical text");

    RunOpts run_o;
    auto* run = app.add_subcommand("run", "run a kernel on a device");
    add_run_flags(run, run_o, true);

    RunOpts mig_o;
    std::string mig_from = "simt", mig_to;
    auto* mig = app.add_subcommand("migrate", "run and migrate between devices");
    add_run_flags(mig, mig_o, false);
    mig->add_option("--from", mig_from, "source device: simt | mimd");
    mig->add_option("--to", mig_to, "target chain, e.g. mimd or mimd,simt")->required();

    std::string blob_file;
    auto* blob = app.add_subcommand("blob", "state blob utilities");
    auto* inspect = blob->add_subcommand("inspect", "print a blob summary");
    inspect->add_option("file", blob_file)->required();
    blob->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int r = app.exit(e);
        return r == 0 ? 0 : 1;
    }

    try {
        if (check->parsed()) return cmd_check(check_file, check_emit);
        if (run->parsed()) return cmd_run(run_o);
        if (mig->parsed()) return cmd_migrate(mig_o, mig_from, mig_to);
        if (blob->parsed() && inspect->parsed()) return cmd_blob_inspect(blob_file);
    } catch (const hetgpu::Error& e) {
        std::cerr << "error (" << hetgpu::to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
