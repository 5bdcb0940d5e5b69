#include "pffnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pffnet/error.hpp"

namespace pffnet {
namespace {

constexpr char kMagic[4] = {'P', 'F', 'F', 'N'};
constexpr std::uint64_t kMaxNameLength = 4096;
constexpr std::uint64_t kMaxConfigLength = 1 << 20;
const std::string kAdamM = "adam.m.";
const std::string kAdamV = "adam.v.";

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError(path, "cannot open for writing");
    }

    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

    template <typename U>
    void le(U v) {
        unsigned char buf[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(buf, sizeof buf);
    }

    void string(const std::string& s) {
        le<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }

    void tensor(const std::string& name, const Tensor32& t) {
        string(name);
        le<std::uint32_t>(4);
        const Shape& s = t.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) le<std::uint64_t>(d);
        if constexpr (std::endian::native == std::endian::little) {
            bytes(t.ptr(), t.size() * sizeof(float));
        } else {
            for (float v : t.data()) le(std::bit_cast<std::uint32_t>(v));
        }
    }

    void finish() {
        out_.flush();
        if (!out_) throw IoError(path_, "write failed");
    }

private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError(path, "cannot open for reading");
    }

    void bytes(void* p, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) fail(std::string("truncated while reading ") + what);
    }

    template <typename U>
    U le(const char* what) {
        unsigned char buf[sizeof(U)];
        bytes(buf, sizeof buf, what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
        return v;
    }

    std::string string(std::uint64_t limit, const char* what) {
        const auto n = le<std::uint64_t>(what);
        if (n > limit) fail(std::string(what) + " length " + std::to_string(n) + " is implausible");
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

    [[noreturn]] void fail(const std::string& reason) const { throw FormatError(path_, reason); }

private:
    std::string path_;
    std::ifstream in_;
};

std::uint64_t require_u64(const KeyValues& kv, const std::string& key, const Reader& r) {
    const std::string* v = find_value(kv, key);
    if (!v) r.fail("config block lacks " + key);
    try {
        return parse_u64(*v, key);
    } catch (const ConfigError& e) {
        r.fail(e.what());
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const TrainState& st = ckpt.state;
    KeyValues kv = to_key_values(ckpt.config);
    kv.emplace_back("counter.iteration", std::to_string(st.iteration));
    kv.emplace_back("counter.epoch", std::to_string(st.epoch));
    kv.emplace_back("counter.epoch_loss_sum", format_double(st.epoch_loss_sum));
    kv.emplace_back("data.pass", std::to_string(st.data_position.pass));
    kv.emplace_back("data.batch", std::to_string(st.data_position.batch));
    kv.emplace_back("adam.present", ckpt.has_optimizer ? "true" : "false");
    if (ckpt.has_optimizer) kv.emplace_back("adam.step", std::to_string(st.adam.step));

    Writer w(path);
    w.bytes(kMagic, sizeof kMagic);
    w.le<std::uint32_t>(kCheckpointVersion);
    w.string(format_key_values(kv));
    const std::size_t count = st.params.size() * (ckpt.has_optimizer ? 3 : 1);
    w.le<std::uint64_t>(count);
    for (const auto& [key, t] : st.params) w.tensor(key, t);
    if (ckpt.has_optimizer) {
        for (const auto& [key, t] : st.adam.m) w.tensor(kAdamM + key, t);
        for (const auto& [key, t] : st.adam.v) w.tensor(kAdamV + key, t);
    }
    w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("bad magic, not a checkpoint file");
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        r.fail("unsupported format version " + std::to_string(version) + " (expected " +
               std::to_string(kCheckpointVersion) + ")");
    }

    Checkpoint ckpt;
    KeyValues kv;
    try {
        kv = parse_key_values(r.string(kMaxConfigLength, "config block"), path);
        KeyValues train_keys;
        for (const auto& p : kv) {
            if (p.first.find('.') == std::string::npos) train_keys.push_back(p);
        }
        apply_key_values(ckpt.config, train_keys);
        ckpt.config.validate();
    } catch (const ConfigError& e) {
        r.fail(std::string("config block: ") + e.what());
    }
    TrainState& st = ckpt.state;
    st.iteration = require_u64(kv, "counter.iteration", r);
    st.epoch = require_u64(kv, "counter.epoch", r);
    st.data_position = {require_u64(kv, "data.pass", r), require_u64(kv, "data.batch", r)};
    if (const std::string* v = find_value(kv, "counter.epoch_loss_sum")) st.epoch_loss_sum = parse_double(*v, "epoch_loss_sum");
    const std::string* present = find_value(kv, "adam.present");
    ckpt.has_optimizer = present && parse_bool(*present, "adam.present");
    if (ckpt.has_optimizer) st.adam.step = require_u64(kv, "adam.step", r);

    // Expected shapes come from the declared config, so a tensor that disagrees is caught
    // before its payload is read.
    const ParamStore<float> expected = zero_params<float>(ckpt.config.model);
    const auto count = r.le<std::uint64_t>("tensor count");
    const std::uint64_t want = expected.size() * (ckpt.has_optimizer ? 3 : 1);
    if (count != want) {
        r.fail("tensor count " + std::to_string(count) + " does not match the declared config (" +
               std::to_string(want) + ")");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.string(kMaxNameLength, "tensor name");
        ParamStore<float>* dest = &st.params;
        std::string key = name;
        if (name.rfind(kAdamM, 0) == 0) {
            dest = &st.adam.m;
            key = name.substr(kAdamM.size());
        } else if (name.rfind(kAdamV, 0) == 0) {
            dest = &st.adam.v;
            key = name.substr(kAdamV.size());
        }
        if (!expected.contains(key)) r.fail("unexpected tensor '" + name + "' for the declared config");
        if (dest->contains(key)) r.fail("duplicate tensor '" + name + "'");
        const auto rank = r.le<std::uint32_t>("tensor rank");
        if (rank != 4) r.fail("tensor '" + name + "' has rank " + std::to_string(rank) + ", expected 4");
        Shape s;
        s.n = r.le<std::uint64_t>("tensor dims");
        s.c = r.le<std::uint64_t>("tensor dims");
        s.h = r.le<std::uint64_t>("tensor dims");
        s.w = r.le<std::uint64_t>("tensor dims");
        const Shape& want_shape = expected.at(key).shape();
        if (s != want_shape) {
            r.fail("tensor '" + name + "' has dims " + s.str() + " but the declared config requires " +
                   want_shape.str());
        }
        Tensor32 t(s);
        if constexpr (std::endian::native == std::endian::little) {
            r.bytes(t.ptr(), t.size() * sizeof(float), "tensor data");
        } else {
            for (float& v : t.data()) v = std::bit_cast<float>(r.le<std::uint32_t>("tensor data"));
        }
        dest->insert(key, std::move(t));
    }
    if (!r.at_end()) r.fail("trailing bytes after the last tensor");
    if (st.params.size() != expected.size()) r.fail("parameter tensors incomplete");
    if (ckpt.has_optimizer && (st.adam.m.size() != expected.size() || st.adam.v.size() != expected.size())) {
        r.fail("optimizer state incomplete");
    }
    return ckpt;
}

}  // namespace pffnet
