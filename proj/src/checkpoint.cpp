#include "depthmatch/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dm {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, std::uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

struct Reader {
    const std::vector<char>& buf;
    std::size_t pos = 0;
    const std::string path;

    void need(std::size_t n) {
        if (pos + n > buf.size()) fail("truncated checkpoint: " + path);
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& d) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) fail("cannot create checkpoint: " + tmp.string());
        f.write(kMagic, 4);
        put<std::uint32_t>(f, d.version);
        put<std::int32_t>(f, d.model.patch_size);
        put<std::int32_t>(f, d.model.embed_dim);
        put<std::int32_t>(f, d.model.encoder_blocks);
        put<std::int32_t>(f, d.model.num_heads);
        put<std::int32_t>(f, d.model.num_classes);
        put<std::int32_t>(f, d.model.pos_grid);
        put<std::uint8_t>(f, d.model.rgb_only ? 1 : 0);
        put<std::uint8_t>(f, d.model.use_lspi ? 1 : 0);
        put<std::int32_t>(f, d.model.lspi_stages);
        put<std::uint64_t>(f, d.config_hash);
        put_string(f, d.resolved_config);
        put<std::int64_t>(f, d.epoch);
        put<std::int64_t>(f, d.global_step);
        put<std::uint32_t>(f, std::uint32_t(d.blobs.size()));
        for (const auto& [name, blob] : d.blobs) {
            const auto& [shape, data] = blob;
            put_string(f, name);
            put<std::uint32_t>(f, std::uint32_t(shape.size()));
            for (auto dim : shape) put<std::int64_t>(f, dim);
            put<std::uint64_t>(f, std::uint64_t(data.size()));
            f.write(reinterpret_cast<const char*>(data.data()),
                    std::streamsize(data.size() * sizeof(float)));
        }
        if (!f) fail("write failure: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open checkpoint: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf, 0, path.string()};

    r.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        fail("not a checkpoint file (bad magic): " + path.string());
    r.pos = 4;

    CheckpointData d;
    d.version = r.get<std::uint32_t>();
    if (d.version != 1) fail(strfmt("unsupported checkpoint version %u", d.version));
    d.model.patch_size = r.get<std::int32_t>();
    d.model.embed_dim = r.get<std::int32_t>();
    d.model.encoder_blocks = r.get<std::int32_t>();
    d.model.num_heads = r.get<std::int32_t>();
    d.model.num_classes = r.get<std::int32_t>();
    d.model.pos_grid = r.get<std::int32_t>();
    d.model.rgb_only = r.get<std::uint8_t>() != 0;
    d.model.use_lspi = r.get<std::uint8_t>() != 0;
    d.model.lspi_stages = r.get<std::int32_t>();
    d.config_hash = r.get<std::uint64_t>();
    d.resolved_config = r.get_string();
    d.epoch = r.get<std::int64_t>();
    d.global_step = r.get<std::int64_t>();
    const auto nblobs = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nblobs; ++i) {
        const std::string name = r.get_string();
        const auto ndim = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t k = 0; k < ndim; ++k) shape.push_back(r.get<std::int64_t>());
        const auto n = r.get<std::uint64_t>();
        if (std::int64_t(n) != numel_of(shape))
            fail("checkpoint blob '" + name + "' length does not match its shape");
        r.need(std::size_t(n) * sizeof(float));
        std::vector<float> data(static_cast<std::size_t>(n));
        std::memcpy(data.data(), buf.data() + r.pos, std::size_t(n) * sizeof(float));
        r.pos += std::size_t(n) * sizeof(float);
        d.blobs.emplace_back(name, std::make_pair(std::move(shape), std::move(data)));
    }
    if (r.pos != buf.size()) fail("trailing garbage in checkpoint: " + path.string());
    return d;
}

void load_params_from_blobs(const CheckpointData& d, const std::string& prefix,
                            ParamStore<float>& params) {
    for (auto& [name, t] : params.items()) {
        const auto* blob = d.find(prefix + name);
        if (!blob) fail("checkpoint is missing parameter '" + prefix + name + "'");
        if (blob->first != t.shape())
            fail("checkpoint shape mismatch for '" + prefix + name + "': stored " +
                 shape_str(blob->first) + ", expected " + shape_str(t.shape()));
        auto vals = t.values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = blob->second[i];
    }
}

}  // namespace dm
