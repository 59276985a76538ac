from src.report.report_generator import RunReporter
