// Activations regularly exceed glibc's mmap threshold; its per-call
// map/unmap churn turns every large tensor into fresh page faults.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    let mut stdout = std::io::stdout().lock();
    std::process::exit(fgv::cli::run(std::env::args_os(), &mut stdout));
}
