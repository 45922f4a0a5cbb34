fn main() {
    std::process::exit(segcvae_cli::dispatch(std::env::args_os()));
}
