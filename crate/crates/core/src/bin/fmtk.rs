fn main() {
    std::process::exit(fmtk::cli::dispatch(std::env::args_os()));
}
