fn main() -> std::process::ExitCode {
    qcorr::cli::main()
}
