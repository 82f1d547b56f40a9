use afnet::metrics::{self, ConfusionMatrix, Timings};

fn main() -> afnet::Result<()> {
    let truth = [1, 1, 1, 2, 2, 2, 3, 3, 3, 3];
    let pred = [1, 1, 2, 2, 2, 1, 3, 3, 3, 2];
    let timings = Timings { train_seconds: 12.5, test_seconds: 0.75 };
    let report = metrics::evaluate(&pred, &truth, 4, timings)?;
    print!("{}", report.to_text());
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    let m = ConfusionMatrix::from_rows(&[vec![2, 1], vec![1, 2]])?;
    println!("[[2,1],[1,2]]: OA {} AA {} kappa {}", metrics::overall_accuracy(&m), metrics::average_accuracy(&m), metrics::kappa(&m));
    Ok(())
}
